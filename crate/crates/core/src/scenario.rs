//! Synthetic market-state generator.
//!
//! Each vehicle draws a state of charge uniformly around its company's mean.
//! Vehicles below the threshold want to charge; their count is `N_i` and their
//! mean energy deficit drives the per-station demand `d^i`. Travel costs and
//! profits are perturbed multiplicatively around station baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::market::{assemble_market, Company, DesiredDistribution, MarketInstance, StationSet};
use crate::policy::MarketState;

/// Target state of charge after a full charge.
pub const SOC_FULL: f64 = 0.8;
/// Redraws of a company whose charging count came out zero.
pub const MAX_REDRAWS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Vehicles per company.
    pub fleets: Vec<u32>,
    pub tau: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: Vec<f64>,
    pub soc_threshold: f64,
    /// Per-company mean and half-width of the state-of-charge distribution.
    pub soc_mean: Vec<f64>,
    pub soc_spread: Vec<f64>,
    pub e_pro_base: Vec<f64>,
    pub e_pro_noise: f64,
    pub e_arr_base: Vec<f64>,
    pub e_arr_noise: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Relative attractiveness of each station for charging demand.
    pub station_factor: Vec<f64>,
    /// Half-width of the multiplicative jitter applied to each `d^i_j`.
    pub demand_jitter: f64,
    /// Optional per-station cap `x^i_j ≤ frac·N_i`.
    #[serde(default)]
    pub cap_fraction: Vec<Option<f64>>,
    pub price_lo: f64,
    pub price_hi: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn n_stations(&self) -> usize {
        self.tau.len()
    }

    pub fn n_companies(&self) -> usize {
        self.fleets.len()
    }

    pub fn desired(&self) -> Result<DesiredDistribution> {
        DesiredDistribution::new(self.z.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_companies(), self.n_stations());
        if n == 0 || m == 0 {
            return Err(Error::Invalid("scenario needs stations and companies".into()));
        }
        check_dim("c", m, self.c.len())?;
        check_dim("Z", m, self.z.len())?;
        check_dim("e_pro_base", m, self.e_pro_base.len())?;
        check_dim("e_arr_base", m, self.e_arr_base.len())?;
        check_dim("station_factor", m, self.station_factor.len())?;
        check_dim("soc_mean", n, self.soc_mean.len())?;
        check_dim("soc_spread", n, self.soc_spread.len())?;
        if !self.cap_fraction.is_empty() {
            check_dim("cap_fraction", m, self.cap_fraction.len())?;
        }
        if !(self.soc_threshold > 0.0 && self.soc_threshold < 1.0) {
            return Err(Error::Invalid("soc_threshold must lie in (0, 1)".into()));
        }
        if !(self.d_min >= 0.0 && self.d_min <= self.d_max) {
            return Err(Error::Invalid("need 0 <= d_min <= d_max".into()));
        }
        if self.fleets.contains(&0) {
            return Err(Error::Invalid("fleet sizes must be positive".into()));
        }
        if self.soc_spread.iter().any(|s| *s < 0.0) {
            return Err(Error::Invalid("soc_spread must be nonnegative".into()));
        }
        if !(self.price_lo < self.price_hi) {
            return Err(Error::Invalid("price_lo must be below price_hi".into()));
        }
        self.desired()?;
        Ok(())
    }
}

/// A generated state together with the market it induces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSnapshot {
    pub name: String,
    pub seed: u64,
    pub t: u64,
    #[serde(flatten)]
    pub market: MarketInstance,
    #[serde(rename = "Z")]
    pub z: DesiredDistribution,
    pub state: MarketState,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        1.0
    } else {
        1.0 + rng.random_range(-amplitude..=amplitude)
    }
}

/// Draws `(N_i, mean deficit)` for one company.
fn draw_fleet<R: Rng + ?Sized>(cfg: &ScenarioConfig, i: usize, rng: &mut R) -> (u32, f64) {
    let (mean, spread) = (cfg.soc_mean[i], cfg.soc_spread[i]);
    for _ in 0..MAX_REDRAWS {
        let mut count = 0u32;
        let mut deficit = 0.0;
        for _ in 0..cfg.fleets[i] {
            let soc = if spread == 0.0 {
                mean
            } else {
                rng.random_range(mean - spread..=mean + spread)
            };
            if soc < cfg.soc_threshold {
                count += 1;
                deficit += (SOC_FULL - soc).max(0.0);
            }
        }
        if count > 0 {
            return (count, deficit / f64::from(count));
        }
    }
    // Escalation: one vehicle at the threshold.
    (1, (SOC_FULL - cfg.soc_threshold).max(0.0))
}

/// State `t` of the stream identified by `seed`.
pub fn generate_state(
    cfg: &ScenarioConfig,
    seed: u64,
    t: u64,
) -> Result<(MarketState, MarketInstance)> {
    cfg.validate()?;
    let (n, m) = (cfg.n_companies(), cfg.n_stations());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);

    let mut companies = Vec::with_capacity(n);
    for i in 0..n {
        let (count, deficit) = draw_fleet(cfg, i, &mut rng);
        let level = deficit / SOC_FULL;
        let d: Vec<f64> = (0..m)
            .map(|j| {
                let raw = cfg.d_min
                    + (cfg.d_max - cfg.d_min) * level * cfg.station_factor[j]
                        * jitter(&mut rng, cfg.demand_jitter);
                raw.clamp(cfg.d_min, cfg.d_max)
            })
            .collect();
        let e_arr: Vec<f64> = cfg
            .e_arr_base
            .iter()
            .map(|b| b * jitter(&mut rng, cfg.e_arr_noise))
            .collect();
        let e_pro: Vec<f64> = cfg
            .e_pro_base
            .iter()
            .map(|b| b * jitter(&mut rng, cfg.e_pro_noise))
            .collect();
        let mut company = Company::simplex(count, d, e_arr, e_pro);
        for (j, cap) in cfg.cap_fraction.iter().enumerate() {
            if let Some(frac) = cap {
                company = company.with_cap(j, frac * f64::from(count));
            }
        }
        companies.push(company);
    }
    let stations = StationSet {
        tau: cfg.tau.clone(),
        c: cfg.c.clone(),
    };
    let market = assemble_market(stations, companies)?;
    let state = MarketState::new(market.state_vector(), n, m)?;
    Ok((state, market))
}

pub fn snapshot(cfg: &ScenarioConfig, seed: u64, t: u64) -> Result<ScenarioSnapshot> {
    let (state, market) = generate_state(cfg, seed, t)?;
    Ok(ScenarioSnapshot {
        name: cfg.name.clone(),
        seed,
        t,
        market,
        z: cfg.desired()?,
        state,
    })
}

/// Four stations and three fleets with the reference sizes, capacities and
/// target distribution; cost parameters are synthetic.
pub fn shenzhen_like() -> ScenarioConfig {
    ScenarioConfig {
        name: "shenzhen-like".into(),
        fleets: vec![450, 400, 350],
        tau: vec![15.0, 60.0, 35.0, 50.0],
        c: vec![0.06, 0.02, 0.04, 0.03],
        z: vec![0.37, 0.19, 0.27, 0.17],
        soc_threshold: 0.55,
        soc_mean: vec![0.55, 0.6, 0.5],
        soc_spread: vec![0.35, 0.35, 0.35],
        e_pro_base: vec![4.0, 2.0, 3.0, 1.5],
        e_pro_noise: 0.1,
        e_arr_base: vec![1.0, 2.5, 1.5, 2.0],
        e_arr_noise: 0.1,
        d_min: 0.2,
        d_max: 1.0,
        station_factor: vec![1.0, 0.8, 0.9, 0.7],
        demand_jitter: 0.1,
        cap_fraction: Vec::new(),
        price_lo: 0.0,
        price_hi: 5.0,
        seed: 2024,
    }
}

/// Two stations and two fleets; small enough for quick end-to-end training.
pub fn desk() -> ScenarioConfig {
    ScenarioConfig {
        name: "desk".into(),
        fleets: vec![60, 40],
        tau: vec![10.0, 10.0],
        c: vec![0.2, 0.2],
        z: vec![0.45, 0.55],
        soc_threshold: 0.55,
        soc_mean: vec![0.5, 0.55],
        soc_spread: vec![0.3, 0.3],
        e_pro_base: vec![0.5, 2.0],
        e_pro_noise: 0.05,
        e_arr_base: vec![1.0, 1.0],
        e_arr_noise: 0.05,
        d_min: 0.5,
        d_max: 1.5,
        station_factor: vec![1.0, 1.0],
        demand_jitter: 0.05,
        cap_fraction: Vec::new(),
        price_lo: 0.0,
        price_hi: 5.0,
        seed: 7,
    }
}

/// Identical companies and stations with a uniform target.
pub fn desk_symmetric() -> ScenarioConfig {
    ScenarioConfig {
        name: "desk-symmetric".into(),
        fleets: vec![50, 50],
        tau: vec![10.0, 10.0],
        c: vec![0.2, 0.2],
        z: vec![0.5, 0.5],
        soc_threshold: 0.55,
        soc_mean: vec![0.4, 0.4],
        soc_spread: vec![0.0, 0.0],
        e_pro_base: vec![2.0, 2.0],
        e_pro_noise: 0.0,
        e_arr_base: vec![1.0, 1.0],
        e_arr_noise: 0.0,
        d_min: 1.0,
        d_max: 1.0,
        station_factor: vec![1.0, 1.0],
        demand_jitter: 0.0,
        cap_fraction: Vec::new(),
        price_lo: 0.0,
        price_hi: 5.0,
        seed: 1,
    }
}

pub fn canonical_fixtures() -> Vec<ScenarioConfig> {
    vec![shenzhen_like(), desk(), desk_symmetric()]
}

pub fn fixture(name: &str) -> Option<ScenarioConfig> {
    canonical_fixtures().into_iter().find(|f| f.name == name)
}

/// Length `2NM` of the state vector.
pub fn state_vector_len(cfg: &ScenarioConfig) -> usize {
    2 * cfg.n_companies() * cfg.n_stations()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::equilibrium::{solve_vne, SolverConfig};
    use crate::market::PriceVector;

    #[test]
    fn reference_fixture_values() {
        let s = shenzhen_like();
        assert_eq!(s.z, vec![0.37, 0.19, 0.27, 0.17]);
        assert_eq!(s.tau, vec![15.0, 60.0, 35.0, 50.0]);
        assert_eq!(s.fleets, vec![450, 400, 350]);
        for f in canonical_fixtures() {
            f.validate().unwrap();
            assert!((f.z.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_soc_counts_whole_fleet() {
        let cfg = desk_symmetric();
        let (_, market) = generate_state(&cfg, 3, 0).unwrap();
        assert_eq!(market.fleets(), vec![50.0, 50.0]);
    }

    #[test]
    fn noiseless_states_are_constant() {
        let cfg = desk_symmetric();
        let a = generate_state(&cfg, 3, 0).unwrap().0;
        let b = generate_state(&cfg, 3, 17).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_streams_repeat() {
        let cfg = desk();
        for t in 0..5 {
            let a = generate_state(&cfg, 11, t).unwrap().0;
            let b = generate_state(&cfg, 11, t).unwrap().0;
            assert_eq!(a, b);
        }
        assert_ne!(
            generate_state(&cfg, 11, 0).unwrap().0,
            generate_state(&cfg, 11, 1).unwrap().0
        );
    }

    #[test]
    fn generated_ranges() {
        for cfg in canonical_fixtures() {
            for t in 0..20 {
                let (state, market) = generate_state(&cfg, 5, t).unwrap();
                assert_eq!(state.len(), state_vector_len(&cfg));
                for i in 0..cfg.n_companies() {
                    assert!(market.fleet(i) <= f64::from(cfg.fleets[i]));
                    assert!(market.fleet(i) >= 1.0);
                    assert!(market
                        .d(i)
                        .iter()
                        .all(|v| *v >= cfg.d_min && *v <= cfg.d_max));
                }
            }
        }
    }

    #[test]
    fn empty_draws_escalate() {
        let mut cfg = desk();
        cfg.soc_mean = vec![0.9, 0.5];
        cfg.soc_spread = vec![0.05, 0.1];
        let (_, market) = generate_state(&cfg, 1, 0).unwrap();
        assert_eq!(market.fleet(0), 1.0);
    }

    #[test]
    fn symmetric_fixture_splits_evenly() {
        let cfg = desk_symmetric();
        let (_, market) = generate_state(&cfg, 0, 0).unwrap();
        let res = solve_vne(&market, &PriceVector::uniform(2, 1.7), &SolverConfig::default()).unwrap();
        assert!((&res.x_star - DVector::from_element(4, 25.0)).amax() < 1e-6);
    }

    #[test]
    fn config_rejects_bad_threshold() {
        let mut cfg = desk();
        cfg.soc_threshold = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = desk();
        cfg.d_min = 2.0;
        assert!(generate_state(&cfg, 0, 0).is_err());
    }

    #[test]
    fn snapshot_reads_back_as_market_document() {
        let snap = snapshot(&shenzhen_like(), 3, 8).unwrap();
        let json = serde_json::to_string(&snap).unwrap();
        let doc: crate::market::MarketDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(*doc.z, *snap.z);
        assert_eq!(doc.market.state_vector(), snap.market.state_vector());
        let back: ScenarioSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back.state, snap.state);
    }
}
