//! Price-space exploration bounds.
//!
//! Every price vector that produces an interior equilibrium satisfies
//! `γ1 ≤ G_π π ≤ Γ1`, where `G_π` stacks the blocks `ΨS_i`. Minimising and
//! maximising each price coordinate over that polytope gives a box that can be
//! sampled coordinate by coordinate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::market::{MarketInstance, PriceVector};

pub use crate::lp::{solve_lp, LinearProgram, LpOutcome};

/// Tolerance applied to both sides of the membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationBounds {
    pub alpha: f64,
    #[serde(with = "crate::serde_vec::matrix")]
    pub psi: DMatrix<f64>,
    pub r_bar_max: f64,
    pub r_bar_min: f64,
    pub z_bar: f64,
    pub z_under: f64,
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub gamma_upper: f64,
    #[serde(with = "crate::serde_vec::matrix")]
    pub g_pi: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PriceBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("box upper corner", lo.len(), hi.len())?;
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("price box corner".into()));
        }
        if let Some(j) = (0..lo.len()).find(|&j| lo[j] > hi[j]) {
            return Err(Error::Invalid(format!(
                "box coordinate {j}: lower bound {} exceeds upper bound {}",
                lo[j], hi[j]
            )));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^m`.
    pub fn cube(m: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; m], vec![hi; m])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, pi: &[f64], tol: f64) -> bool {
        pi.len() == self.dim()
            && pi
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(p, (l, h))| *p >= l - tol && *p <= h + tol)
    }
}

/// Computes `α`, `Ψ`, the `r̄` and `z` extrema, `γ`, `Γ` and `G_π`.
pub fn compute_bounds(market: &MarketInstance) -> ExplorationBounds {
    let (n, m) = (market.n_companies(), market.n_stations());
    let c = market.c();
    // P = 2C is diagonal.
    let p_inv: Vec<f64> = c.iter().map(|v| 0.5 / v).collect();
    let alpha = 1.0 / p_inv.iter().sum::<f64>();
    let psi = DMatrix::from_fn(m, m, |r, k| {
        let identity = if r == k { 1.0 } else { 0.0 };
        identity - alpha * p_inv[k]
    });

    let mut r_bar_max = f64::NEG_INFINITY;
    let mut r_bar_min = f64::INFINITY;
    let mut g_pi = DMatrix::zeros(n * m, m);
    for i in 0..n {
        let r_bar = &psi * market.r(i);
        r_bar_max = r_bar.iter().fold(r_bar_max, |a, v| a.max(*v));
        r_bar_min = r_bar.iter().fold(r_bar_min, |a, v| a.min(*v));
        let d = market.d(i);
        let block = DMatrix::from_fn(m, m, |r, k| psi[(r, k)] * d[k]);
        g_pi.view_mut((i * m, 0), (m, m)).copy_from(&block);
    }

    let fleets = market.fleets();
    let n_tot = market.total_fleet();
    let n_max = fleets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_min = fleets.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_bar = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z_bar = (c_bar - alpha / 2.0) * n_tot + (c_bar + alpha / 2.0) * n_max;
    let z_under = alpha / 2.0 * (n_min - n_tot);
    ExplorationBounds {
        alpha,
        psi,
        r_bar_max,
        r_bar_min,
        z_bar,
        z_under,
        gamma: alpha * n_min - r_bar_max - z_bar,
        gamma_upper: alpha * n_max - r_bar_min - z_under,
        g_pi,
    }
}

/// True iff every row of `G_π π` lies in `[γ, Γ]` up to [`MEMBERSHIP_TOL`].
pub fn membership_relaxed(bounds: &ExplorationBounds, pi: &PriceVector) -> bool {
    if pi.len() != bounds.g_pi.ncols() {
        return false;
    }
    let scale = 1.0 + bounds.gamma.abs().max(bounds.gamma_upper.abs());
    let tol = MEMBERSHIP_TOL * scale;
    (&bounds.g_pi * &pi.0)
        .iter()
        .all(|v| *v >= bounds.gamma - tol && *v <= bounds.gamma_upper + tol)
}

/// Residual of `ΨS_iπ = αN_i1 − Ψr_i − z_i` with
/// `z_i = P x^i + ΨC Σ_{k≠i} x^k`, maximised over companies.
pub fn interior_identity_residual(
    market: &MarketInstance,
    bounds: &ExplorationBounds,
    x: &DVector<f64>,
    pi: &PriceVector,
) -> Result<f64> {
    let (n, m) = (market.n_companies(), market.n_stations());
    check_dim("joint strategy", market.joint_len(), x.len())?;
    check_dim("price vector", m, pi.len())?;
    let agg = market.aggregate(x);
    let p = market.p_matrix();
    let psi_c = &bounds.psi * market.q_matrix();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let xi = x.rows(i * m, m).into_owned();
        let z = &p * &xi + &psi_c * (&agg - &xi);
        let lhs = &bounds.psi * market.d(i).component_mul(&pi.0);
        let rhs = DVector::from_element(m, bounds.alpha * market.fleet(i))
            - &bounds.psi * market.r(i)
            - z;
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(worst)
}

/// Box superset together with the LP vertices attaining each bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSuperset {
    pub bounds: PriceBox,
    /// `lower[j]` minimises and `upper[j]` maximises coordinate `j`.
    pub lower: Vec<DVector<f64>>,
    pub upper: Vec<DVector<f64>>,
}

fn relaxed_program(bounds: &ExplorationBounds, objective: DVector<f64>) -> LinearProgram {
    let rows = bounds.g_pi.nrows();
    let mut a = DMatrix::zeros(2 * rows, bounds.g_pi.ncols());
    a.view_mut((0, 0), bounds.g_pi.shape()).copy_from(&bounds.g_pi);
    a.view_mut((rows, 0), bounds.g_pi.shape())
        .copy_from(&(-&bounds.g_pi));
    let mut b = DVector::zeros(2 * rows);
    b.rows_mut(0, rows).fill(bounds.gamma_upper);
    b.rows_mut(rows, rows).fill(-bounds.gamma);
    LinearProgram::new(objective).with_ub(a, b)
}

/// Solves the `2M` coordinate LPs over `γ1 ≤ G_π π ≤ Γ1`.
pub fn box_superset_with_vertices(bounds: &ExplorationBounds) -> Result<BoxSuperset> {
    let m = bounds.g_pi.ncols();
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for j in 0..m {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(m);
            c[j] = sign;
            match solve_lp(&relaxed_program(bounds, c))? {
                LpOutcome::Optimal { x, .. } => {
                    if sign > 0.0 {
                        lo.push(x[j]);
                        lower.push(x);
                    } else {
                        hi.push(x[j]);
                        upper.push(x);
                    }
                }
                LpOutcome::Unbounded => return Err(Error::UnboundedCoordinate { coordinate: j }),
                LpOutcome::Infeasible => {
                    return Err(Error::Infeasible("relaxed exploration polytope is empty".into()))
                }
            }
        }
    }
    Ok(BoxSuperset {
        bounds: PriceBox::new(lo, hi)?,
        lower,
        upper,
    })
}

/// Per-coordinate bounding box of the relaxed exploration polytope.
pub fn box_superset(bounds: &ExplorationBounds) -> Result<PriceBox> {
    box_superset_with_vertices(bounds).map(|b| b.bounds)
}

/// Independent uniform draw per coordinate.
pub fn sample_uniform<R: Rng + ?Sized>(pbox: &PriceBox, rng: &mut R) -> PriceVector {
    let v: Vec<f64> = pbox
        .lo
        .iter()
        .zip(&pbox.hi)
        .map(|(&l, &h)| if l == h { l } else { rng.random_range(l..h) })
        .collect();
    PriceVector(DVector::from_vec(v))
}

/// `count` uniform draws from a ChaCha8 stream seeded with `seed`.
pub fn sample_uniform_seeded(pbox: &PriceBox, seed: u64, count: usize) -> Vec<PriceVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_uniform(pbox, &mut rng)).collect()
}
