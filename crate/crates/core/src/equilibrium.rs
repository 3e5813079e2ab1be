//! Variational Nash equilibrium of the market.
//!
//! The pseudo-gradient `F(x, π) = F₁x + F₂` has a symmetric positive definite
//! `F₁ = (I_N + 1 1ᵀ) ⊗ C`, so the VI is strongly monotone and the projected
//! iteration `x ← Π_X(x − ηF(x))` with `η = 1/λ_max(F₁)` contracts towards
//! the unique equilibrium. Projections onto each company's polytope are solved
//! exactly with the active-set QP.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lp::find_feasible_point;
use crate::market::{MarketInstance, Polytope, PriceVector};
use crate::qp::{solve_qp, QpOutcome, QuadraticProgram};

/// Slack below which an inequality counts as active when recovering duals.
pub const ACTIVE_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ProjectedGradient,
    Extragradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Step size; `None` selects `1/λ_max(F₁)`.
    pub step: Option<f64>,
    /// Natural-map residual tolerance (∞-norm).
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: None,
            tol: 1e-8,
            max_iter: 200_000,
            scheme: Scheme::ProjectedGradient,
        }
    }
}

impl SolverConfig {
    fn resolve_step(&self, m: &MarketInstance) -> Result<f64> {
        let limit = 1.0 / m.lambda_max();
        let step = self.step.unwrap_or(limit);
        if !(step > 0.0 && step <= limit * (1.0 + 1e-12)) {
            return Err(Error::Invalid(format!(
                "step {step} outside (0, 1/lambda_max = {limit}]"
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("tolerance must be positive".into()));
        }
        Ok(step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    #[serde(with = "crate::serde_vec")]
    pub x_star: DVector<f64>,
    /// Duals of `G_i x ≤ h_i`, one vector per company.
    #[serde(with = "crate::serde_vec::nested")]
    pub lambda_star: Vec<DVector<f64>>,
    /// Duals of `1ᵀx^i = N_i`.
    pub nu_star: Vec<f64>,
    /// Natural-map residual `‖x − Π(x − ηF(x))‖_∞` at `x_star`.
    pub residual: f64,
    pub iterations: usize,
    pub interior: bool,
    /// Aggregate share per station, `Σ_i x^i / N_tot`.
    #[serde(with = "crate::serde_vec")]
    pub x_hat: DVector<f64>,
}

/// Euclidean projection of `y` onto `{1ᵀx = total, Gx ≤ h}`.
///
/// `start` must be a feasible point when given; otherwise one is found by LP.
pub fn project_onto_polytope(
    poly: &Polytope,
    y: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    check_dim("projection point", poly.dim(), y.len())?;
    let m = poly.dim();
    let qp = QuadraticProgram::new(DMatrix::identity(m, m), -y)
        .with_eq(poly.sum_row(), DVector::from_element(1, poly.total))
        .with_in(poly.g.clone(), poly.h.clone());
    match solve_qp(&qp, start)? {
        QpOutcome::Optimal(sol) => Ok(sol.x),
        QpOutcome::Infeasible => Err(Error::Infeasible("projection onto an empty polytope".into())),
    }
}

/// Joint projection `Π_X` that keeps the previous point of every company as a
/// feasible warm start.
struct JointProjector<'a> {
    market: &'a MarketInstance,
    anchors: Vec<DVector<f64>>,
}

impl<'a> JointProjector<'a> {
    fn new(market: &'a MarketInstance) -> Result<Self> {
        let mut anchors = Vec::with_capacity(market.n_companies());
        for i in 0..market.n_companies() {
            let poly = market.polytope(i);
            let point = find_feasible_point(
                &poly.g,
                &poly.h,
                &poly.sum_row(),
                &DVector::from_element(1, poly.total),
            )?
            .ok_or_else(|| Error::Infeasible(format!("company {i}: empty polytope")))?;
            anchors.push(point);
        }
        Ok(Self { market, anchors })
    }

    /// Projects `y`; the result becomes the next warm start.
    fn project(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.market.n_stations();
        let mut out = DVector::zeros(y.len());
        for i in 0..self.market.n_companies() {
            let yi = y.rows(i * m, m).into_owned();
            let xi = project_onto_polytope(self.market.polytope(i), &yi, Some(&self.anchors[i]))?;
            out.rows_mut(i * m, m).copy_from(&xi);
            self.anchors[i] = xi;
        }
        Ok(out)
    }

    /// Projection that leaves the warm starts untouched.
    fn project_detached(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.market.n_stations();
        let mut out = DVector::zeros(y.len());
        for i in 0..self.market.n_companies() {
            let yi = y.rows(i * m, m).into_owned();
            let xi = project_onto_polytope(self.market.polytope(i), &yi, Some(&self.anchors[i]))?;
            out.rows_mut(i * m, m).copy_from(&xi);
        }
        Ok(out)
    }
}

/// Natural-map residual `‖x − Π_X(x − ηF(x, π))‖_∞`.
pub fn natural_residual(
    market: &MarketInstance,
    x: &DVector<f64>,
    pi: &PriceVector,
    step: f64,
) -> Result<f64> {
    let f = market.pseudo_gradient(x, pi)?;
    let m = market.n_stations();
    let mut worst: f64 = 0.0;
    for i in 0..market.n_companies() {
        let xi = x.rows(i * m, m).into_owned();
        let yi = &xi - f.rows(i * m, m) * step;
        let start = (market.polytope(i).violation(&xi) <= 1e-9).then_some(&xi);
        let pi_x = project_onto_polytope(market.polytope(i), &yi, start)?;
        worst = worst.max((pi_x - xi).amax());
    }
    Ok(worst)
}

/// Computes the unique variational Nash equilibrium for prices `pi`.
pub fn solve_vne(
    market: &MarketInstance,
    pi: &PriceVector,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    solve_vne_from(market, pi, cfg, None, None)
}

/// As [`solve_vne`], starting from `x0` (projected onto the feasible set) and
/// optionally recording the natural-map residual of every iterate.
pub fn solve_vne_from(
    market: &MarketInstance,
    pi: &PriceVector,
    cfg: &SolverConfig,
    x0: Option<&DVector<f64>>,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<EquilibriumResult> {
    check_dim("price vector", market.n_stations(), pi.len())?;
    let step = cfg.resolve_step(market)?;
    let mut projector = JointProjector::new(market)?;

    let start = match x0 {
        Some(x) => {
            check_dim("initial joint strategy", market.joint_len(), x.len())?;
            x.clone()
        }
        None => {
            let m = market.n_stations();
            let mut x = DVector::zeros(market.joint_len());
            for i in 0..market.n_companies() {
                x.rows_mut(i * m, m)
                    .fill(market.fleet(i) / m as f64);
            }
            x
        }
    };
    let mut x = projector.project(&start)?;

    let mut best = (f64::INFINITY, x.clone());
    for iter in 0..cfg.max_iter {
        let f = market.pseudo_gradient(&x, pi)?;
        let next = projector.project(&(&x - &f * step))?;
        let residual = (&next - &x).amax();
        if let Some(t) = trace.as_deref_mut() {
            t.push(residual);
        }
        if !residual.is_finite() {
            return Err(Error::NonFinite("equilibrium iterate".into()));
        }
        if residual < best.0 {
            best = (residual, x.clone());
        }
        if residual <= cfg.tol {
            return finish(market, pi, x, residual, iter, step);
        }
        x = match cfg.scheme {
            Scheme::ProjectedGradient => next,
            Scheme::Extragradient => {
                let f_bar = market.pseudo_gradient(&next, pi)?;
                projector.project_detached(&(&x - &f_bar * step))?
            }
        };
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        residual: best.0,
        best: best.1.iter().copied().collect(),
    })
}

fn finish(
    market: &MarketInstance,
    pi: &PriceVector,
    x: DVector<f64>,
    residual: f64,
    iterations: usize,
    step: f64,
) -> Result<EquilibriumResult> {
    let (x, residual) = match polish(market, pi, &x)? {
        Some(candidate) => {
            let r = natural_residual(market, &candidate, pi, step)?;
            if r <= residual {
                (candidate, r)
            } else {
                (x, residual)
            }
        }
        None => (x, residual),
    };
    let (lambda_star, nu_star) = recover_duals(market, &x, pi)?;
    let interior = is_interior(market, &x, ACTIVE_MARGIN);
    let x_hat = market.aggregate(&x) / market.total_fleet();
    Ok(EquilibriumResult {
        x_star: x,
        lambda_star,
        nu_star,
        residual,
        iterations,
        interior,
        x_hat,
    })
}

/// Solves the equilibrium conditions as a linear system with the active set
/// of `x` held fixed. Returns `None` unless the result is primal feasible and
/// its active multipliers are nonnegative.
fn polish(
    market: &MarketInstance,
    pi: &PriceVector,
    x: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let (n, m) = (market.n_companies(), market.n_stations());
    let nm = n * m;
    let active: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let poly = market.polytope(i);
            let xi = x.rows(i * m, m);
            (0..poly.rows())
                .filter(|&l| poly.h[l] - poly.g.row(l).dot(&xi.transpose()) <= ACTIVE_MARGIN)
                .collect()
        })
        .collect();
    let n_act: usize = active.iter().map(Vec::len).sum();
    let dim = nm + n + n_act;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let f1 = market.f1_matrix();
    a.view_mut((0, 0), (nm, nm)).copy_from(&f1);
    let f2 = market.pseudo_gradient(&DVector::zeros(nm), pi)?;
    b.rows_mut(0, nm).copy_from(&(-f2));
    let mut col = nm + n;
    for i in 0..n {
        let poly = market.polytope(i);
        for j in 0..m {
            a[(i * m + j, nm + i)] = 1.0;
            a[(nm + i, i * m + j)] = 1.0;
        }
        b[nm + i] = poly.total;
        for &l in &active[i] {
            for j in 0..m {
                a[(i * m + j, col)] = poly.g[(l, j)];
                a[(col, i * m + j)] = poly.g[(l, j)];
            }
            b[col] = poly.h[l];
            col += 1;
        }
    }
    let Some(sol) = a.lu().solve(&b) else {
        return Ok(None);
    };
    if sol.iter().any(|v| !v.is_finite()) || sol.rows(nm + n, n_act).iter().any(|v| *v < 0.0) {
        return Ok(None);
    }
    let candidate = sol.rows(0, nm).into_owned();
    let feasible = (0..n).all(|i| {
        let xi = candidate.rows(i * m, m).into_owned();
        market.polytope(i).violation(&xi) <= 1e-12 * (1.0 + market.fleet(i))
    });
    Ok(feasible.then_some(candidate))
}

/// True when every inequality holds with slack larger than `margin`.
pub fn is_interior(market: &MarketInstance, x: &DVector<f64>, margin: f64) -> bool {
    let m = market.n_stations();
    (0..market.n_companies()).all(|i| {
        let poly = market.polytope(i);
        let xi = x.rows(i * m, m);
        (0..poly.rows()).all(|l| poly.h[l] - poly.g.row(l).dot(&xi.transpose()) > margin)
    })
}

/// Least-squares fit of `G_Aᵀλ_A + 1ν = −∇_{x^i}J^i` on the active set `A`
/// (rows with slack ≤ [`ACTIVE_MARGIN`]). Rows whose fitted multiplier comes
/// out negative are released one at a time and the fit repeated.
pub fn recover_duals(
    market: &MarketInstance,
    x: &DVector<f64>,
    pi: &PriceVector,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let m = market.n_stations();
    let f = market.pseudo_gradient(x, pi)?;
    let mut lambdas = Vec::with_capacity(market.n_companies());
    let mut nus = Vec::with_capacity(market.n_companies());
    for i in 0..market.n_companies() {
        let poly = market.polytope(i);
        let xi = x.rows(i * m, m);
        let grad = f.rows(i * m, m).into_owned();
        let mut active: Vec<usize> = (0..poly.rows())
            .filter(|&l| poly.h[l] - poly.g.row(l).dot(&xi.transpose()) <= ACTIVE_MARGIN)
            .collect();
        loop {
            let k = active.len();
            let mut b = DMatrix::zeros(m, k + 1);
            for (slot, &l) in active.iter().enumerate() {
                b.set_column(slot, &poly.g.row(l).transpose());
            }
            b.set_column(k, &DVector::from_element(m, 1.0));
            let svd = b.svd(true, true);
            let sol = svd
                .solve(&(-&grad), 1e-12)
                .map_err(|e| Error::Singular(e.to_string()))?;
            let worst = (0..k)
                .map(|s| (s, sol[s]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((s, v)) if v < -1e-9 * (1.0 + grad.amax()) => {
                    active.remove(s);
                }
                _ => {
                    let mut lambda = DVector::zeros(poly.rows());
                    for (slot, &l) in active.iter().enumerate() {
                        lambda[l] = sol[slot].max(0.0);
                    }
                    lambdas.push(lambda);
                    nus.push(sol[k]);
                    break;
                }
            }
        }
    }
    Ok((lambdas, nus))
}

/// Interior equilibrium from the stacked linear KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorSolution {
    pub x: DVector<f64>,
    pub nu: DVector<f64>,
}

/// Solves the equilibrium conditions with every inequality multiplier set to
/// zero. Returns `None` when the solution violates `G_i x^i ≤ h_i − 1e-9`.
pub fn solve_interior_kkt(
    market: &MarketInstance,
    pi: &PriceVector,
) -> Result<Option<InteriorSolution>> {
    check_dim("price vector", market.n_stations(), pi.len())?;
    let (n, m) = (market.n_companies(), market.n_stations());
    let dim = n * m + n;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let c = market.c();
    for i in 0..n {
        for j in 0..m {
            let row = i * m + j;
            for k in 0..n {
                a[(row, k * m + j)] = if k == i { 2.0 * c[j] } else { c[j] };
            }
            a[(row, n * m + i)] = 1.0;
            b[row] = -(market.r(i)[j] + market.d(i)[j] * pi[j]);
        }
        for j in 0..m {
            a[(n * m + i, i * m + j)] = 1.0;
        }
        b[n * m + i] = market.fleet(i);
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stacked interior KKT system".into()))?;
    let x = sol.rows(0, n * m).into_owned();
    let nu = sol.rows(n * m, n).into_owned();
    for i in 0..n {
        let poly = market.polytope(i);
        let xi = x.rows(i * m, m);
        if (&poly.g * xi - &poly.h).iter().any(|v| *v > -1e-9) {
            return Ok(None);
        }
    }
    Ok(Some(InteriorSolution { x, nu }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖P x^i + C x^{−i} + r_i + S_iπ + G_iᵀλ_i + 1ν_i‖_∞`
    pub stationarity: f64,
    /// `max(‖diag(λ_i)(G_i x^i − h_i)‖_∞, max(−λ_i))`
    pub complementarity: f64,
    /// `max(|1ᵀx^i − N_i|, max(G_i x^i − h_i))`
    pub primal: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.primal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub companies: Vec<KktResiduals>,
    pub pass: bool,
}

impl KktReport {
    pub fn worst(&self) -> f64 {
        self.companies.iter().map(KktResiduals::max).fold(0.0, f64::max)
    }
}

pub const KKT_TOLERANCE: f64 = 1e-6;

/// Evaluates the per-company KKT residuals of an equilibrium candidate.
pub fn verify_kkt(
    market: &MarketInstance,
    result: &EquilibriumResult,
    pi: &PriceVector,
) -> Result<KktReport> {
    let (n, m) = (market.n_companies(), market.n_stations());
    check_dim("lambda blocks", n, result.lambda_star.len())?;
    check_dim("nu entries", n, result.nu_star.len())?;
    let f = market.pseudo_gradient(&result.x_star, pi)?;
    let mut companies = Vec::with_capacity(n);
    for i in 0..n {
        let poly = market.polytope(i);
        let lambda = &result.lambda_star[i];
        check_dim("lambda", poly.rows(), lambda.len())?;
        let xi = result.x_star.rows(i * m, m);
        let stat = f.rows(i * m, m) + poly.g.transpose() * lambda
            + DVector::from_element(m, result.nu_star[i]);
        let slack = &poly.g * xi - &poly.h;
        let comp = lambda
            .iter()
            .zip(slack.iter())
            .fold(0.0_f64, |acc, (l, s)| acc.max((l * s).abs()).max(-l));
        let primal = slack
            .iter()
            .fold((xi.sum() - poly.total).abs(), |acc, s| acc.max(*s));
        companies.push(KktResiduals {
            stationarity: stat.amax(),
            complementarity: comp,
            primal,
        });
    }
    let pass = companies.iter().all(|c| c.max() <= KKT_TOLERANCE);
    Ok(KktReport { companies, pass })
}
