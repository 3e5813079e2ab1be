//! Exact solution of the pricing problem with the followers' KKT conditions
//! embedded through a big-M complementarity reformulation.
//!
//! Variables are stacked as `v = (x, ν, λ, π)`. For a fixed binary pattern
//! `m` the program is an LP (feasibility mode) or a convex QP (least-squares
//! mode). Patterns are either enumerated or searched by best-first
//! branch-and-bound with the relaxation `λ_l ≥ 0, s_l ≥ 0, λ_l + s_l ≤ β`
//! on unfixed rows, where `s_l = h_l − G_l x`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exploration::PriceBox;
use crate::lp::{solve_lp, LinearProgram, LpOutcome};
use crate::market::{DesiredDistribution, MarketInstance, PriceVector};
use crate::qp::{solve_qp, QpOutcome, QuadraticProgram};

/// Relative margin that accepted multipliers and slacks must keep below `β`.
pub const BETA_MARGIN: f64 = 1e-6;
/// Doublings allowed before calibration gives up.
pub const MAX_DOUBLINGS: usize = 20;
/// Largest binary count solved by exhaustive enumeration under [`Strategy::Auto`].
pub const ENUMERATION_LIMIT: usize = 16;

#[derive(Debug, Clone)]
pub struct BigMProgram {
    /// `I_N ⊗ C + 1 1ᵀ ⊗ C`
    pub p1: DMatrix<f64>,
    /// Block diagonal of `1_M` columns.
    pub p2: DMatrix<f64>,
    /// Block diagonal of `G_iᵀ`.
    pub p3: DMatrix<f64>,
    pub r_bar: DVector<f64>,
    /// Stacked `S_i = diag(d_i)`.
    pub s_bar: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DVector<f64>,
    pub g_bar: DMatrix<f64>,
    pub h_bar: DVector<f64>,
    /// Aggregation operator `Λx = Σ_i x^i`.
    pub lambda_op: DMatrix<f64>,
    /// `N_tot · Z`
    pub target: DVector<f64>,
    pub beta: f64,
    pub price_box: Option<PriceBox>,
    n: usize,
    m: usize,
    rows_per_company: Vec<usize>,
}

impl BigMProgram {
    pub fn n_binaries(&self) -> usize {
        self.g_bar.nrows()
    }

    pub fn n_companies(&self) -> usize {
        self.n
    }

    pub fn n_stations(&self) -> usize {
        self.m
    }

    pub fn rows_per_company(&self) -> &[usize] {
        &self.rows_per_company
    }

    fn nx(&self) -> usize {
        self.n * self.m
    }

    fn n_vars(&self) -> usize {
        self.nx() + self.n + self.n_binaries() + self.m
    }

    fn off_nu(&self) -> usize {
        self.nx()
    }

    fn off_lambda(&self) -> usize {
        self.nx() + self.n
    }

    fn off_pi(&self) -> usize {
        self.nx() + self.n + self.n_binaries()
    }

    /// `‖P̄₁x + P̄₂ν + P̄₃λ + S̄π + r̄‖_∞`
    pub fn stationarity_residual(
        &self,
        x: &DVector<f64>,
        nu: &DVector<f64>,
        lambda: &DVector<f64>,
        pi: &DVector<f64>,
    ) -> Result<f64> {
        check_dim("x", self.nx(), x.len())?;
        check_dim("nu", self.n, nu.len())?;
        check_dim("lambda", self.n_binaries(), lambda.len())?;
        check_dim("pi", self.m, pi.len())?;
        let lhs = &self.p1 * x + &self.p2 * nu + &self.p3 * lambda + &self.s_bar * pi;
        Ok((lhs + &self.r_bar).amax())
    }

    pub fn with_price_box(mut self, pbox: PriceBox) -> Result<Self> {
        check_dim("price box", self.m, pbox.dim())?;
        self.price_box = Some(pbox);
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
        }
        self.beta = beta;
        Ok(self)
    }
}

/// Initial big-M constant `10·max(‖h̄‖_∞, N_tot·max c·(N+1), ‖r̄‖_∞)`.
pub fn default_beta(market: &MarketInstance) -> f64 {
    let n = market.n_companies();
    let h_max = (0..n)
        .map(|i| market.polytope(i).h.amax())
        .fold(0.0, f64::max);
    let r_max = (0..n).map(|i| market.r(i).amax()).fold(0.0, f64::max);
    let c_max = market.c().amax();
    let scale = h_max
        .max(market.total_fleet() * c_max * (n as f64 + 1.0))
        .max(r_max);
    10.0 * scale.max(1.0)
}

/// Stacks the big-M program for the given market and target distribution.
pub fn build_program(
    market: &MarketInstance,
    z: &DesiredDistribution,
    beta: f64,
) -> Result<BigMProgram> {
    let (n, m) = (market.n_companies(), market.n_stations());
    check_dim("desired distribution", m, z.len())?;
    if !(beta > 0.0) {
        return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
    }
    let nx = n * m;
    let rows_per_company: Vec<usize> = (0..n).map(|i| market.polytope(i).rows()).collect();
    let l_total: usize = rows_per_company.iter().sum();

    let mut p2 = DMatrix::zeros(nx, n);
    let mut p3 = DMatrix::zeros(nx, l_total);
    let mut s_bar = DMatrix::zeros(nx, m);
    let mut a_bar = DMatrix::zeros(n, nx);
    let mut g_bar = DMatrix::zeros(l_total, nx);
    let mut r_bar = DVector::zeros(nx);
    let mut h_bar = DVector::zeros(l_total);
    let mut b_bar = DVector::zeros(n);
    let mut lambda_op = DMatrix::zeros(m, nx);
    let mut row = 0;
    for i in 0..n {
        let poly = market.polytope(i);
        for j in 0..m {
            p2[(i * m + j, i)] = 1.0;
            a_bar[(i, i * m + j)] = 1.0;
            s_bar[(i * m + j, j)] = market.d(i)[j];
            lambda_op[(j, i * m + j)] = 1.0;
        }
        r_bar.rows_mut(i * m, m).copy_from(market.r(i));
        b_bar[i] = poly.total;
        for l in 0..poly.rows() {
            for j in 0..m {
                p3[(i * m + j, row + l)] = poly.g[(l, j)];
                g_bar[(row + l, i * m + j)] = poly.g[(l, j)];
            }
            h_bar[row + l] = poly.h[l];
        }
        row += poly.rows();
    }
    let target = DVector::from_iterator(m, z.iter().map(|v| v * market.total_fleet()));
    Ok(BigMProgram {
        p1: market.f1_matrix(),
        p2,
        p3,
        r_bar,
        s_bar,
        a_bar,
        b_bar,
        g_bar,
        h_bar,
        lambda_op,
        target,
        beta,
        price_box: None,
        n,
        m,
        rows_per_company,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Feasibility,
    Miqp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Enumeration up to [`ENUMERATION_LIMIT`] binaries, branch-and-bound above.
    Auto,
    Enumerate,
    BranchAndBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Feasible,
    Infeasible,
    Optimal,
}

/// A solution of the program for one binary pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pi: PriceVector,
    #[serde(with = "crate::serde_vec")]
    pub x_star: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub lambda_star: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub nu_star: DVector<f64>,
    pub m: Vec<u8>,
    /// 0 in feasibility mode, `‖Λx − N_tot Z‖²` otherwise.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelSolution {
    pub status: Status,
    pub mode: Mode,
    pub assignment: Option<Assignment>,
    pub beta_used: f64,
    /// Every β tried, in order.
    pub beta_trail: Vec<f64>,
    pub nodes: usize,
    pub leaves: usize,
}

/// Outcome of one search at a fixed β.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Option<Assignment>,
    pub nodes: usize,
    pub leaves: usize,
}

type Fixing = Vec<Option<bool>>;

struct Rows {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Rows {
    fn new() -> Self {
        Self {
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<f64>, rhs: f64) {
        self.a.push(row);
        self.b.push(rhs);
    }

    fn into_parts(self, width: usize) -> (DMatrix<f64>, DVector<f64>) {
        let flat: Vec<f64> = self.a.iter().flatten().copied().collect();
        (
            DMatrix::from_row_slice(self.a.len(), width, &flat),
            DVector::from_vec(self.b),
        )
    }
}

/// Constraints of the continuous subproblem for a partial fixing.
fn node_constraints(
    prog: &BigMProgram,
    fixing: &[Option<bool>],
    beta: f64,
    mode: Mode,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let nv = prog.n_vars();
    let nx = prog.nx();
    let (off_nu, off_l, off_pi) = (prog.off_nu(), prog.off_lambda(), prog.off_pi());
    let mut eq = Rows::new();
    let mut ub = Rows::new();

    for r in 0..nx {
        let mut row = vec![0.0; nv];
        for c in 0..nx {
            row[c] = prog.p1[(r, c)];
        }
        for c in 0..prog.n {
            row[off_nu + c] = prog.p2[(r, c)];
        }
        for c in 0..prog.n_binaries() {
            row[off_l + c] = prog.p3[(r, c)];
        }
        for c in 0..prog.m {
            row[off_pi + c] = prog.s_bar[(r, c)];
        }
        eq.push(row, -prog.r_bar[r]);
    }
    for i in 0..prog.n {
        let mut row = vec![0.0; nv];
        row[..nx].copy_from_slice(prog.a_bar.row(i).transpose().as_slice());
        eq.push(row, prog.b_bar[i]);
    }
    if mode == Mode::Feasibility {
        for j in 0..prog.m {
            let mut row = vec![0.0; nv];
            row[..nx].copy_from_slice(prog.lambda_op.row(j).transpose().as_slice());
            eq.push(row, prog.target[j]);
        }
    }

    let finite = beta.is_finite();
    for (l, fix) in fixing.iter().enumerate() {
        let g_row: Vec<f64> = prog.g_bar.row(l).iter().copied().collect();
        let h = prog.h_bar[l];
        let unit = |idx: usize, v: f64| {
            let mut row = vec![0.0; nv];
            row[idx] = v;
            row
        };
        let with_g = |sign: f64, lambda: f64| {
            let mut row = vec![0.0; nv];
            for (j, g) in g_row.iter().enumerate() {
                row[j] = sign * g;
            }
            row[off_l + l] = lambda;
            row
        };
        match fix {
            Some(true) => {
                eq.push(with_g(1.0, 0.0), h);
                ub.push(unit(off_l + l, -1.0), 0.0);
                if finite {
                    ub.push(unit(off_l + l, 1.0), beta);
                }
            }
            Some(false) => {
                eq.push(unit(off_l + l, 1.0), 0.0);
                ub.push(with_g(1.0, 0.0), h);
                if finite {
                    ub.push(with_g(-1.0, 0.0), beta - h);
                }
            }
            None => {
                ub.push(unit(off_l + l, -1.0), 0.0);
                ub.push(with_g(1.0, 0.0), h);
                if finite {
                    ub.push(with_g(-1.0, 1.0), beta - h);
                }
            }
        }
    }
    if let Some(pbox) = &prog.price_box {
        for j in 0..prog.m {
            let mut hi = vec![0.0; nv];
            hi[off_pi + j] = 1.0;
            ub.push(hi, pbox.hi[j]);
            let mut lo = vec![0.0; nv];
            lo[off_pi + j] = -1.0;
            ub.push(lo, -pbox.lo[j]);
        }
    }
    let (a_eq, b_eq) = eq.into_parts(nv);
    let (a_ub, b_ub) = ub.into_parts(nv);
    (a_eq, b_eq, a_ub, b_ub)
}

fn leader_value(prog: &BigMProgram, x: &DVector<f64>) -> f64 {
    (&prog.lambda_op * x - &prog.target).norm_squared()
}

/// Solves the continuous subproblem. Returns the stacked variables and the
/// objective, or `None` when infeasible.
fn solve_node(
    prog: &BigMProgram,
    fixing: &[Option<bool>],
    beta: f64,
    mode: Mode,
) -> Result<Option<(DVector<f64>, f64)>> {
    let (a_eq, b_eq, a_ub, b_ub) = node_constraints(prog, fixing, beta, mode);
    let nv = prog.n_vars();
    match mode {
        Mode::Feasibility => {
            let mut c = DVector::zeros(nv);
            c.rows_mut(prog.off_lambda(), prog.n_binaries()).fill(1.0);
            let lp = LinearProgram::new(c).with_ub(a_ub, b_ub).with_eq(a_eq, b_eq);
            match solve_lp(&lp)? {
                LpOutcome::Optimal { x, .. } => Ok(Some((x, 0.0))),
                LpOutcome::Infeasible => Ok(None),
                LpOutcome::Unbounded => Err(Error::Unbounded),
            }
        }
        Mode::Miqp => {
            let nx = prog.nx();
            let lt = prog.lambda_op.transpose();
            let mut h = DMatrix::zeros(nv, nv);
            h.view_mut((0, 0), (nx, nx))
                .copy_from(&(&lt * &prog.lambda_op * 2.0));
            let mut g = DVector::zeros(nv);
            g.rows_mut(0, nx).copy_from(&(&lt * &prog.target * -2.0));
            let qp = QuadraticProgram::new(h, g)
                .with_eq(a_eq, b_eq)
                .with_in(a_ub, b_ub);
            match solve_qp(&qp, None)? {
                QpOutcome::Optimal(sol) => {
                    let value = leader_value(prog, &sol.x.rows(0, nx).into_owned());
                    Ok(Some((sol.x, value)))
                }
                QpOutcome::Infeasible => Ok(None),
            }
        }
    }
}

fn pattern_of(index: u64, l: usize) -> Fixing {
    (0..l).map(|b| Some(index >> b & 1 == 1)).collect()
}

fn assignment(prog: &BigMProgram, v: DVector<f64>, fixing: &[Option<bool>], objective: f64) -> Assignment {
    let nx = prog.nx();
    Assignment {
        pi: PriceVector(v.rows(prog.off_pi(), prog.m).into_owned()),
        x_star: v.rows(0, nx).into_owned(),
        lambda_star: v.rows(prog.off_lambda(), prog.n_binaries()).into_owned(),
        nu_star: v.rows(prog.off_nu(), prog.n).into_owned(),
        m: fixing.iter().map(|f| u8::from(f.unwrap_or(false))).collect(),
        objective,
    }
}

/// Evaluates one complete binary pattern.
pub fn solve_pattern(
    prog: &BigMProgram,
    pattern: &[u8],
    beta: f64,
    mode: Mode,
) -> Result<Option<Assignment>> {
    check_dim("binary pattern", prog.n_binaries(), pattern.len())?;
    let fixing: Fixing = pattern.iter().map(|b| Some(*b != 0)).collect();
    Ok(solve_node(prog, &fixing, beta, mode)?.map(|(v, obj)| assignment(prog, v, &fixing, obj)))
}

/// Leaf ordering shared by enumeration and branch-and-bound: objective first,
/// then the pattern read as a little-endian integer.
fn better(a: &Assignment, b: &Assignment) -> bool {
    match a.objective.total_cmp(&b.objective) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.m.iter().rev().cmp(b.m.iter().rev()) == Ordering::Less,
    }
}

/// Tries all `2^L` patterns.
pub fn enumerate(prog: &BigMProgram, beta: f64, mode: Mode) -> Result<SearchOutcome> {
    let l = prog.n_binaries();
    if l >= 40 {
        return Err(Error::Invalid(format!("{l} binaries are too many to enumerate")));
    }
    let mut best: Option<Assignment> = None;
    let mut leaves = 0;
    for k in 0..1u64 << l {
        let fixing = pattern_of(k, l);
        leaves += 1;
        if let Some((v, obj)) = solve_node(prog, &fixing, beta, mode)? {
            let cand = assignment(prog, v, &fixing, obj);
            if mode == Mode::Feasibility {
                return Ok(SearchOutcome {
                    best: Some(cand),
                    nodes: leaves,
                    leaves,
                });
            }
            if best.as_ref().map_or(true, |b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    Ok(SearchOutcome {
        best,
        nodes: leaves,
        leaves,
    })
}

struct Node {
    bound: f64,
    seq: usize,
    fixing: Fixing,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: smaller bound first; in feasibility mode all bounds are equal
    // and the most recent node wins, which gives depth-first order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.seq.cmp(&other.seq))
    }
}

fn prune_threshold(incumbent: &Option<Assignment>) -> f64 {
    match incumbent {
        Some(a) => a.objective + 1e-6 * (1.0 + a.objective.abs()),
        None => f64::INFINITY,
    }
}

/// Best-first branch-and-bound. Rows are branched in index order and every
/// surviving path is followed down to a complete pattern.
pub fn branch_and_bound(prog: &BigMProgram, beta: f64, mode: Mode) -> Result<SearchOutcome> {
    let l = prog.n_binaries();
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut nodes = 0;
    let mut leaves = 0;
    let mut incumbent: Option<Assignment> = None;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixing: vec![None; l],
    });
    while let Some(node) = heap.pop() {
        if node.bound > prune_threshold(&incumbent) {
            continue;
        }
        let depth = node.fixing.iter().take_while(|f| f.is_some()).count();
        if depth == l {
            leaves += 1;
            if let Some((v, obj)) = solve_node(prog, &node.fixing, beta, mode)? {
                let cand = assignment(prog, v, &node.fixing, obj);
                if mode == Mode::Feasibility {
                    return Ok(SearchOutcome {
                        best: Some(cand),
                        nodes,
                        leaves,
                    });
                }
                if incumbent.as_ref().map_or(true, |b| better(&cand, b)) {
                    incumbent = Some(cand);
                }
            }
            continue;
        }
        // Children are pushed true-first so that the false branch, which
        // keeps the row inactive, is popped first on ties.
        for value in [true, false] {
            let mut fixing = node.fixing.clone();
            fixing[depth] = Some(value);
            nodes += 1;
            let bound = if depth + 1 == l {
                node.bound
            } else {
                match solve_node(prog, &fixing, beta, mode) {
                    Ok(Some((_, obj))) => obj,
                    Ok(None) => continue,
                    Err(Error::NotConverged { .. }) | Err(Error::Singular(_)) => node.bound,
                    Err(e) => return Err(e),
                }
            };
            if bound > prune_threshold(&incumbent) {
                continue;
            }
            seq += 1;
            heap.push(Node { bound, seq, fixing });
        }
    }
    Ok(SearchOutcome {
        best: incumbent,
        nodes,
        leaves,
    })
}

/// Dispatches to enumeration or branch-and-bound at a fixed β.
pub fn search(prog: &BigMProgram, beta: f64, mode: Mode, strategy: Strategy) -> Result<SearchOutcome> {
    let enumerate_it = match strategy {
        Strategy::Enumerate => true,
        Strategy::BranchAndBound => false,
        Strategy::Auto => prog.n_binaries() <= ENUMERATION_LIMIT,
    };
    if enumerate_it {
        enumerate(prog, beta, mode)
    } else {
        branch_and_bound(prog, beta, mode)
    }
}

/// True when all multipliers and slacks stay below `β(1 − margin)`.
pub fn margins_hold(prog: &BigMProgram, a: &Assignment, beta: f64) -> bool {
    let cap = beta * (1.0 - BETA_MARGIN);
    let slack = &prog.h_bar - &prog.g_bar * &a.x_star;
    a.lambda_star.iter().all(|v| *v <= cap) && slack.iter().all(|v| *v <= cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    pub strategy: Strategy,
    pub max_doublings: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Auto,
            max_doublings: MAX_DOUBLINGS,
        }
    }
}

/// Solves starting at `prog.beta` and doubles β until the accepted solution
/// keeps the margins. A pattern search with `β = ∞` decides whether a failure
/// at finite β is genuine infeasibility and, in least-squares mode, supplies
/// the reference optimum the finite-β answer must match.
pub fn solve(prog: &BigMProgram, mode: Mode, opts: SolveOptions) -> Result<BilevelSolution> {
    let mut beta = prog.beta;
    let mut trail = Vec::new();
    let mut nodes = 0;
    let mut leaves = 0;
    let mut reference: Option<SearchOutcome> = None;
    let mut reference_of = |nodes: &mut usize, leaves: &mut usize| -> Result<Option<f64>> {
        if reference.is_none() {
            let out = search(prog, f64::INFINITY, mode, opts.strategy)?;
            *nodes += out.nodes;
            *leaves += out.leaves;
            reference = Some(out);
        }
        Ok(reference
            .as_ref()
            .and_then(|r| r.best.as_ref().map(|a| a.objective)))
    };

    for _ in 0..=opts.max_doublings {
        trail.push(beta);
        let out = search(prog, beta, mode, opts.strategy)?;
        nodes += out.nodes;
        leaves += out.leaves;
        match out.best {
            Some(a) if margins_hold(prog, &a, beta) => {
                let accept = match mode {
                    Mode::Feasibility => true,
                    Mode::Miqp => {
                        let best = reference_of(&mut nodes, &mut leaves)?.unwrap_or(f64::INFINITY);
                        a.objective <= best + 1e-6 * (1.0 + best.abs())
                    }
                };
                if accept {
                    return Ok(BilevelSolution {
                        status: match mode {
                            Mode::Feasibility => Status::Feasible,
                            Mode::Miqp => Status::Optimal,
                        },
                        mode,
                        assignment: Some(a),
                        beta_used: beta,
                        beta_trail: trail,
                        nodes,
                        leaves,
                    });
                }
            }
            Some(_) => {}
            None => {
                if reference_of(&mut nodes, &mut leaves)?.is_none() {
                    return Ok(BilevelSolution {
                        status: Status::Infeasible,
                        mode,
                        assignment: None,
                        beta_used: beta,
                        beta_trail: trail,
                        nodes,
                        leaves,
                    });
                }
            }
        }
        beta *= 2.0;
    }
    Err(Error::BetaCap {
        doublings: opts.max_doublings,
        beta: beta / 2.0,
    })
}

/// Feasibility program: `Λx = N_tot Z` must hold exactly.
pub fn solve_feasibility(prog: &BigMProgram) -> Result<BilevelSolution> {
    solve(prog, Mode::Feasibility, SolveOptions::default())
}

/// Least-squares program: minimises `‖Λx − N_tot Z‖²`.
pub fn solve_miqp(prog: &BigMProgram) -> Result<BilevelSolution> {
    solve(prog, Mode::Miqp, SolveOptions::default())
}

/// β accepted by the feasibility program when started from [`default_beta`].
pub fn calibrate_beta(market: &MarketInstance, z: &DesiredDistribution) -> Result<f64> {
    let prog = build_program(market, z, default_beta(market))?;
    Ok(solve_feasibility(&prog)?.beta_used)
}
