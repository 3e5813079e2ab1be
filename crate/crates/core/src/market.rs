//! Market data and the quadratic aggregative game played by the companies.
//!
//! Company `i` chooses how many of its `N_i` charging vehicles to send to each
//! of the `M` stations, `x^i ∈ {x : 1ᵀx = N_i, G_i x ≤ h_i}`, and minimises
//!
//! ```text
//! J^i = ½ x^iᵀ P x^i + x^iᵀ C Σ_{j≠i} x^j + r_iᵀ x^i + x^iᵀ S_i π
//! ```
//!
//! with `P = 2C`, `S_i = diag(d_i)` and `r_i = e_arr − e_pro − Cτ`. The last
//! term of `r_i` comes from expanding the queuing cost
//! `x^iᵀ C (x^i + Σ_{j≠i} x^j − τ)`, so the assembled cost equals queuing
//! cost plus negative revenue plus charging bill exactly.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lp::find_feasible_point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSet {
    /// Station capacities (vehicles).
    pub tau: Vec<f64>,
    /// Queuing cost coefficients; `C = diag(c)`.
    pub c: Vec<f64>,
}

impl StationSet {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Company {
    /// Number of vehicles that want to charge, `N_i`.
    pub fleet: u32,
    /// Expected charging demand per vehicle at each station (kWh).
    pub d: Vec<f64>,
    pub e_arr: Vec<f64>,
    pub e_pro: Vec<f64>,
    /// Inequality rows `G_i x ≤ h_i`. Nonnegativity rows are added on
    /// assembly when missing.
    #[serde(rename = "G", default)]
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub h: Vec<f64>,
}

impl Company {
    /// Company constrained only by `x ≥ 0` and `1ᵀx = fleet`.
    pub fn simplex(fleet: u32, d: Vec<f64>, e_arr: Vec<f64>, e_pro: Vec<f64>) -> Self {
        Self {
            fleet,
            d,
            e_arr,
            e_pro,
            g: Vec::new(),
            h: Vec::new(),
        }
    }

    /// Adds the row `x_j ≤ cap`.
    pub fn with_cap(mut self, station: usize, cap: f64) -> Self {
        let mut row = vec![0.0; self.d.len()];
        row[station] = 1.0;
        self.g.push(row);
        self.h.push(cap);
        self
    }
}

/// Per-kWh charging prices, one per station. Any finite value is allowed;
/// negative prices are subsidies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(#[serde(with = "crate::serde_vec")] pub DVector<f64>);

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("price vector".into()));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn zeros(m: usize) -> Self {
        Self(DVector::zeros(m))
    }

    pub fn uniform(m: usize, level: f64) -> Self {
        Self(DVector::from_element(m, level))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

impl Deref for PriceVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for PriceVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// Target share of vehicles per station; entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DesiredDistribution(DVector<f64>);

impl DesiredDistribution {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::Invalid("empty desired distribution".into()));
        }
        if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!(
                "desired distribution entries must lie in [0, 1]: {z:?}"
            )));
        }
        let sum: f64 = z.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "desired distribution must sum to 1 (got {sum})"
            )));
        }
        Ok(Self(DVector::from_vec(z)))
    }

    pub fn uniform(m: usize) -> Self {
        Self(DVector::from_element(m, 1.0 / m as f64))
    }
}

impl Deref for DesiredDistribution {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DesiredDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DesiredDistribution> for Vec<f64> {
    fn from(z: DesiredDistribution) -> Self {
        z.0.iter().copied().collect()
    }
}

/// Feasible set of one company in matrix form.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub total: f64,
}

impl Polytope {
    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    /// Largest violation of `1ᵀx = total` and `Gx ≤ h`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (x.sum() - self.total).abs();
        (&self.g * x - &self.h)
            .iter()
            .fold(eq, |m, v| m.max(*v))
    }

    pub fn sum_row(&self) -> DMatrix<f64> {
        DMatrix::from_element(1, self.dim(), 1.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MarketSpec {
    stations: StationSet,
    companies: Vec<Company>,
}

/// The π-parametrised game: stations, companies and the derived quadratic
/// data. Serialises as `{stations, companies}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MarketSpec", into = "MarketSpec")]
pub struct MarketInstance {
    stations: StationSet,
    companies: Vec<Company>,
    c: DVector<f64>,
    d: Vec<DVector<f64>>,
    r: Vec<DVector<f64>>,
    polytopes: Vec<Polytope>,
}

impl TryFrom<MarketSpec> for MarketInstance {
    type Error = Error;

    fn try_from(spec: MarketSpec) -> Result<Self> {
        assemble_market(spec.stations, spec.companies)
    }
}

impl From<MarketInstance> for MarketSpec {
    fn from(m: MarketInstance) -> Self {
        MarketSpec {
            stations: m.stations,
            companies: m.companies,
        }
    }
}

/// A market together with its target distribution, serialised as
/// `{stations, companies, Z}`. Other fields are ignored on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketDocument {
    #[serde(flatten)]
    pub market: MarketInstance,
    #[serde(rename = "Z")]
    pub z: DesiredDistribution,
}

fn ensure_nonnegativity(company: &mut Company, m: usize) {
    for j in 0..m {
        let present = company.g.iter().zip(&company.h).any(|(row, &h)| {
            h <= 0.0 && row.iter().enumerate().all(|(k, &v)| v == if k == j { -1.0 } else { 0.0 })
        });
        if !present {
            let mut row = vec![0.0; m];
            row[j] = -1.0;
            company.g.push(row);
            company.h.push(0.0);
        }
    }
}

/// Validates the inputs and builds the game data.
pub fn assemble_market(stations: StationSet, companies: Vec<Company>) -> Result<MarketInstance> {
    let m = stations.len();
    if m == 0 {
        return Err(Error::Invalid("at least one station is required".into()));
    }
    check_dim("tau", m, stations.tau.len())?;
    if let Some(bad) = stations.c.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::Invalid(format!(
            "queuing cost coefficients must be strictly positive (got {bad})"
        )));
    }
    if stations.tau.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::Invalid("station capacities must be nonnegative".into()));
    }
    if companies.is_empty() {
        return Err(Error::Invalid("at least one company is required".into()));
    }

    let c = DVector::from_column_slice(&stations.c);
    let tau = DVector::from_column_slice(&stations.tau);
    let c_tau = c.component_mul(&tau);
    let mut out_companies = Vec::with_capacity(companies.len());
    let mut d = Vec::with_capacity(companies.len());
    let mut r = Vec::with_capacity(companies.len());
    let mut polytopes = Vec::with_capacity(companies.len());

    for (i, mut company) in companies.into_iter().enumerate() {
        if company.fleet == 0 {
            return Err(Error::Invalid(format!("company {i} has an empty fleet")));
        }
        check_dim("d", m, company.d.len())?;
        check_dim("e_arr", m, company.e_arr.len())?;
        check_dim("e_pro", m, company.e_pro.len())?;
        check_dim("h", company.g.len(), company.h.len())?;
        for row in &company.g {
            check_dim("G row", m, row.len())?;
        }
        if company.d.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!(
                "company {i}: charging demand must be nonnegative"
            )));
        }
        let finite = company
            .e_arr
            .iter()
            .chain(&company.e_pro)
            .chain(&company.h)
            .chain(company.g.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("company {i} data")));
        }
        ensure_nonnegativity(&mut company, m);

        let rows = company.g.len();
        let g = DMatrix::from_fn(rows, m, |a, b| company.g[a][b]);
        let h = DVector::from_column_slice(&company.h);
        let total = f64::from(company.fleet);
        let poly = Polytope { g, h, total };
        let feasible = find_feasible_point(
            &poly.g,
            &poly.h,
            &poly.sum_row(),
            &DVector::from_element(1, total),
        )?;
        if feasible.is_none() {
            return Err(Error::Infeasible(format!(
                "company {i}: strategy polytope is empty"
            )));
        }
        d.push(DVector::from_column_slice(&company.d));
        r.push(
            DVector::from_column_slice(&company.e_arr) - DVector::from_column_slice(&company.e_pro)
                - &c_tau,
        );
        polytopes.push(poly);
        out_companies.push(company);
    }

    Ok(MarketInstance {
        stations,
        companies: out_companies,
        c,
        d,
        r,
        polytopes,
    })
}

impl MarketInstance {
    pub fn n_companies(&self) -> usize {
        self.companies.len()
    }

    pub fn n_stations(&self) -> usize {
        self.c.len()
    }

    /// Length of a joint strategy, `N·M`.
    pub fn joint_len(&self) -> usize {
        self.n_companies() * self.n_stations()
    }

    pub fn stations(&self) -> &StationSet {
        &self.stations
    }

    pub fn companies(&self) -> &[Company] {
        &self.companies
    }

    /// Diagonal of `C`.
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// `P = 2C` as a dense matrix.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&(&self.c * 2.0))
    }

    /// Coupling matrix applied to the opponents' aggregate, `C`.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.c)
    }

    pub fn r(&self, i: usize) -> &DVector<f64> {
        &self.r[i]
    }

    /// Diagonal of `S_i`.
    pub fn d(&self, i: usize) -> &DVector<f64> {
        &self.d[i]
    }

    pub fn polytope(&self, i: usize) -> &Polytope {
        &self.polytopes[i]
    }

    pub fn fleet(&self, i: usize) -> f64 {
        f64::from(self.companies[i].fleet)
    }

    pub fn fleets(&self) -> Vec<f64> {
        (0..self.n_companies()).map(|i| self.fleet(i)).collect()
    }

    pub fn total_fleet(&self) -> f64 {
        self.fleets().iter().sum()
    }

    /// Total number of inequality rows over all companies.
    pub fn total_inequalities(&self) -> usize {
        self.polytopes.iter().map(Polytope::rows).sum()
    }

    /// Largest eigenvalue of `F₁ = (I_N + 1 1ᵀ) ⊗ C`.
    pub fn lambda_max(&self) -> f64 {
        (self.n_companies() as f64 + 1.0) * self.c.max()
    }

    /// Smallest eigenvalue of `F₁`: `min c` for two or more companies, `2 min c`
    /// for one.
    pub fn lambda_min(&self) -> f64 {
        if self.n_companies() == 1 {
            2.0 * self.c.min()
        } else {
            self.c.min()
        }
    }

    /// Dense `F₁`.
    pub fn f1_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n_companies(), self.n_stations());
        DMatrix::from_fn(n * m, n * m, |a, b| {
            let (ia, ja) = (a / m, a % m);
            let (ib, jb) = (b / m, b % m);
            if ja != jb {
                0.0
            } else if ia == ib {
                2.0 * self.c[ja]
            } else {
                self.c[ja]
            }
        })
    }

    pub fn block<'a>(&self, x: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        let m = self.n_stations();
        x.rows(i * m, m)
    }

    /// Σ_i x^i.
    pub fn aggregate(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.n_stations();
        let mut agg = DVector::zeros(m);
        for i in 0..self.n_companies() {
            agg += self.block(x, i);
        }
        agg
    }

    fn check_joint(&self, x: &DVector<f64>, pi: &PriceVector) -> Result<()> {
        check_dim("joint strategy", self.joint_len(), x.len())?;
        check_dim("price vector", self.n_stations(), pi.len())
    }

    /// `F(x, π)`: block `i` is `P x^i + C Σ_{j≠i} x^j + r_i + S_i π`.
    pub fn pseudo_gradient(&self, x: &DVector<f64>, pi: &PriceVector) -> Result<DVector<f64>> {
        self.check_joint(x, pi)?;
        let m = self.n_stations();
        let agg = self.aggregate(x);
        let mut out = DVector::zeros(self.joint_len());
        for i in 0..self.n_companies() {
            let xi = self.block(x, i);
            for j in 0..m {
                out[i * m + j] =
                    self.c[j] * (xi[j] + agg[j]) + self.r[i][j] + self.d[i][j] * pi[j];
            }
        }
        Ok(out)
    }

    /// `J^i(x^i, x^{−i}; π)` as the quadratic form.
    pub fn company_cost(&self, i: usize, x: &DVector<f64>, pi: &PriceVector) -> Result<f64> {
        self.check_joint(x, pi)?;
        if i >= self.n_companies() {
            return Err(Error::Invalid(format!("company index {i} out of range")));
        }
        let agg = self.aggregate(x);
        let xi = self.block(x, i);
        let mut cost = 0.0;
        for j in 0..self.n_stations() {
            let others = agg[j] - xi[j];
            cost += xi[j]
                * (self.c[j] * xi[j] + self.c[j] * others + self.r[i][j] + self.d[i][j] * pi[j]);
        }
        Ok(cost)
    }

    /// `½‖Σ_i x^i − N_tot·Z‖²`.
    pub fn leader_objective(&self, x_star: &DVector<f64>, z: &DesiredDistribution) -> Result<f64> {
        check_dim("joint strategy", self.joint_len(), x_star.len())?;
        check_dim("desired distribution", self.n_stations(), z.len())?;
        let gap = self.aggregate(x_star) - z.deref() * self.total_fleet();
        Ok(0.5 * gap.norm_squared())
    }

    /// Observation vector `col(d^1..d^N, r_1..r_N)` of length `2NM`.
    pub fn state_vector(&self) -> DVector<f64> {
        let (n, m) = (self.n_companies(), self.n_stations());
        let mut s = DVector::zeros(2 * n * m);
        for i in 0..n {
            s.rows_mut(i * m, m).copy_from(&self.d[i]);
            s.rows_mut(n * m + i * m, m).copy_from(&self.r[i]);
        }
        s
    }
}

/// `1 − ‖Z − x̂‖₂/√2` for an aggregate distribution summing to `n_tot`.
pub fn reward_from_aggregate(
    aggregate: &DVector<f64>,
    n_tot: f64,
    z: &DesiredDistribution,
) -> Result<f64> {
    check_dim("aggregate", z.len(), aggregate.len())?;
    if !(n_tot > 0.0) {
        return Err(Error::Invalid("total fleet must be positive".into()));
    }
    if let Some(v) = aggregate.iter().find(|v| **v < -1e-9) {
        return Err(Error::Invalid(format!("negative aggregate entry {v}")));
    }
    let sum = aggregate.sum();
    if (sum - n_tot).abs() > 1e-6 * n_tot.max(1.0) {
        return Err(Error::Invalid(format!(
            "aggregate sums to {sum}, expected {n_tot}"
        )));
    }
    let x_hat = aggregate / n_tot;
    let dist = (z.deref() - x_hat).norm();
    Ok((1.0 - dist / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
}

/// Reward of a joint strategy given the fleet counts.
pub fn reward(x_star: &DVector<f64>, fleets: &[f64], z: &DesiredDistribution) -> Result<f64> {
    let m = z.len();
    check_dim("joint strategy", fleets.len() * m, x_star.len())?;
    let mut agg = DVector::zeros(m);
    for i in 0..fleets.len() {
        agg += x_star.rows(i * m, m);
    }
    reward_from_aggregate(&agg, fleets.iter().sum(), z)
}
