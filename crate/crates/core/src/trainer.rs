//! Contextual-bandit training loop.
//!
//! The first `n_explore` iterations draw prices uniformly from an exploration
//! box. Afterwards every iteration fits the policy on a batch from the buffer
//! by ascending the reward-weighted log-likelihood, samples a price for the
//! fresh state, observes the equilibrium and stores the transition.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_vne, SolverConfig};
use crate::error::{Error, Result};
use crate::exploration::{box_superset, compute_bounds, sample_uniform, PriceBox};
use crate::market::{reward_from_aggregate, DesiredDistribution, MarketInstance, PriceVector};
use crate::policy::{forward, sample, MarketState, PolicyParams};
use crate::scenario::{generate_state, ScenarioConfig};

pub const MOVING_AVERAGE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: MarketState,
    pub pi: PriceVector,
    pub reward: f64,
}

/// Every transition observed during a run, in order.
#[derive(Debug, Clone, Default)]
pub struct Buffer {
    items: Vec<Transition>,
}

impl Buffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !(0.0..=1.0).contains(&t.reward) {
            return Err(Error::Invalid(format!("reward {} outside [0, 1]", t.reward)));
        }
        self.items.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// `size` distinct transitions chosen uniformly.
    pub fn sample_batch<R: rand::Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Result<Vec<&Transition>> {
        if size == 0 || size > self.items.len() {
            return Err(Error::Invalid(format!(
                "batch of {size} from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(sample_indices(rng, self.items.len(), size)
            .into_iter()
            .map(|k| &self.items[k])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// `θ ← θ + lr·∇`
    Plain,
    /// Adaptive moments with decay 0.9 / 0.999 and ε = 1e-8, reset at each
    /// update so that every batch fit starts from zero moments.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExplorationSpace {
    /// Fixed box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Per-state box superset of the relaxed exploration polytope.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_iter: usize,
    pub n_explore: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// `None` samples from the scenario's price box.
    #[serde(default)]
    pub exploration: Option<ExplorationSpace>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iter: 1000,
            n_explore: 250,
            batch: 32,
            epochs: 20,
            lr: 1e-3,
            optimizer: Optimizer::Plain,
            seed: 0,
            exploration: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_explore > self.n_iter {
            return Err(Error::Invalid("n_explore exceeds n_iter".into()));
        }
        if self.batch == 0 {
            return Err(Error::Invalid("batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        if self.n_explore == 0 && self.n_iter > 0 {
            return Err(Error::Invalid(
                "at least one exploration iteration is needed to fill the buffer".into(),
            ));
        }
        Ok(())
    }
}

/// Equilibrium aggregate share `x̂*` and reward for prices `pi`.
pub fn environment_step(
    market: &MarketInstance,
    pi: &PriceVector,
    z: &DesiredDistribution,
) -> Result<(DVector<f64>, f64)> {
    let ne = solve_vne(market, pi, &SolverConfig::default())?;
    let reward = reward_from_aggregate(&market.aggregate(&ne.x_star), market.total_fleet(), z)?;
    Ok((ne.x_hat, reward))
}

/// Batch objective after each epoch (index 0 is before the first step).
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub objectives: Vec<f64>,
}

/// Runs `epochs` ascent steps on `Σ_k R_k log ρ(π_k | s_k)` over the batch.
pub fn update_step(
    params: &mut PolicyParams,
    batch: &[&Transition],
    lr: f64,
    epochs: usize,
    optimizer: Optimizer,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let states: Vec<&MarketState> = batch.iter().map(|t| &t.s).collect();
    let prices: Vec<&PriceVector> = batch.iter().map(|t| &t.pi).collect();
    let weights: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let mut theta = params.to_flat();
    let n = theta.len();
    let (mut m1, mut m2) = (DVector::zeros(n), DVector::zeros(n));
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
    let mut objectives = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let (obj, grad) = params.weighted_log_prob_grad(&states, &prices, &weights)?;
        objectives.push(obj);
        match optimizer {
            Optimizer::Plain => theta.axpy(lr, &grad, 1.0),
            Optimizer::Adam => {
                let t = (epoch + 1) as i32;
                m1 = m1 * b1 + &grad * (1.0 - b1);
                m2 = m2 * b2 + grad.map(|g| g * g) * (1.0 - b2);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for k in 0..n {
                    let step = (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                    theta[k] += lr * step;
                }
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        params.set_flat(&theta)?;
    }
    let (obj, _) = params.weighted_log_prob_grad(&states, &prices, &weights)?;
    objectives.push(obj);
    Ok(UpdateStats { objectives })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Explore,
    Learn,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Explore => "explore",
            Phase::Learn => "learn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// 1-based iteration.
    pub iter: usize,
    pub reward: f64,
    pub ma100: f64,
    pub price: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub log: Vec<LogRow>,
    pub params: PolicyParams,
    pub buffer: Buffer,
}

/// Exploration box for one state.
fn exploration_box(
    scenario: &ScenarioConfig,
    space: &Option<ExplorationSpace>,
    market: &MarketInstance,
) -> Result<PriceBox> {
    let m = scenario.n_stations();
    match space {
        None => PriceBox::cube(m, scenario.price_lo, scenario.price_hi),
        Some(ExplorationSpace::Box { lo, hi }) => PriceBox::new(lo.clone(), hi.clone()),
        Some(ExplorationSpace::Relaxed) => box_superset(&compute_bounds(market)),
    }
}

/// State stream of a training run.
pub fn training_stream_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0000_0000_0001
}

/// Full training protocol.
pub fn run_training(scenario: &ScenarioConfig, cfg: &TrainConfig) -> Result<TrainingRun> {
    run_training_with(scenario, cfg, |_| {})
}

/// As [`run_training`], calling `on_row` after every iteration.
pub fn run_training_with<F: FnMut(&LogRow)>(
    scenario: &ScenarioConfig,
    cfg: &TrainConfig,
    mut on_row: F,
) -> Result<TrainingRun> {
    cfg.validate()?;
    scenario.validate()?;
    let z = scenario.desired()?;
    let (n, m) = (scenario.n_companies(), scenario.n_stations());
    let mut params = PolicyParams::new(n, m, scenario.price_lo, scenario.price_hi, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stream = training_stream_seed(cfg.seed);
    let mut buffer = Buffer::new();
    let mut log: Vec<LogRow> = Vec::with_capacity(cfg.n_iter);
    let mut rewards: Vec<f64> = Vec::with_capacity(cfg.n_iter);

    for t in 0..cfg.n_iter {
        let (state, market) = generate_state(scenario, stream, t as u64)?;
        let (pi, phase) = if t < cfg.n_explore {
            let pbox = exploration_box(scenario, &cfg.exploration, &market)?;
            (sample_uniform(&pbox, &mut rng), Phase::Explore)
        } else {
            let size = cfg.batch.min(buffer.len());
            let batch = buffer.sample_batch(&mut rng, size)?;
            update_step(&mut params, &batch, cfg.lr, cfg.epochs, cfg.optimizer)?;
            (sample(&params, &state, &mut rng)?, Phase::Learn)
        };
        let (x_hat, reward) = environment_step(&market, &pi, &z)?;
        rewards.push(reward);
        let ma100 = moving_average(&rewards, rewards.len());
        let row = LogRow {
            iter: t + 1,
            reward,
            ma100,
            price: pi.to_vec(),
            x_hat: x_hat.iter().copied().collect(),
            phase,
        };
        on_row(&row);
        log.push(row);
        buffer.push(Transition {
            s: state,
            pi,
            reward,
        })?;
    }
    Ok(TrainingRun {
        log,
        params,
        buffer,
    })
}

/// Exact 100-window moving average recomputed from scratch.
pub fn moving_average(rewards: &[f64], end: usize) -> f64 {
    let start = end.saturating_sub(MOVING_AVERAGE);
    let window = &rewards[start..end];
    window.iter().sum::<f64>() / window.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub t: u64,
    pub reward: f64,
    pub price: Vec<f64>,
    pub x_hat: Vec<f64>,
    /// `‖Z − x̂*‖₂`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_reward: f64,
}

/// Plays the deterministic price `μ(s)` on `n_states` states of stream `seed`.
pub fn evaluate(
    params: &PolicyParams,
    scenario: &ScenarioConfig,
    n_states: usize,
    seed: u64,
) -> Result<EvalReport> {
    let z = scenario.desired()?;
    let mut rows = Vec::with_capacity(n_states);
    for t in 0..n_states as u64 {
        let (state, market) = generate_state(scenario, seed, t)?;
        let (mu, _) = forward(params, &state)?;
        let pi = PriceVector(mu);
        let (x_hat, reward) = environment_step(&market, &pi, &z)?;
        let gap = x_hat
            .iter()
            .zip(z.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        rows.push(EvalRow {
            t,
            reward,
            price: pi.to_vec(),
            x_hat: x_hat.iter().copied().collect(),
            gap,
        });
    }
    let mean_reward = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.reward).sum::<f64>() / rows.len() as f64
    };
    Ok(EvalReport { rows, mean_reward })
}

/// Formats with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `iter,reward,ma100,price_1..M,xhat_1..M,phase`
pub fn write_log_csv<W: Write>(out: &mut W, rows: &[LogRow], m: usize) -> std::io::Result<()> {
    let mut header = vec!["iter".to_string(), "reward".into(), "ma100".into()];
    header.extend((1..=m).map(|j| format!("price_{j}")));
    header.extend((1..=m).map(|j| format!("xhat_{j}")));
    header.push("phase".into());
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.iter.to_string(), fmt17(r.reward), fmt17(r.ma100)];
        fields.extend(r.price.iter().map(|v| fmt17(*v)));
        fields.extend(r.x_hat.iter().map(|v| fmt17(*v)));
        fields.push(r.phase.as_str().into());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// `t,reward,gap,price_1..M,xhat_1..M`
pub fn write_eval_csv<W: Write>(out: &mut W, report: &EvalReport, m: usize) -> std::io::Result<()> {
    let mut header = vec!["t".to_string(), "reward".into(), "gap".into()];
    header.extend((1..=m).map(|j| format!("price_{j}")));
    header.extend((1..=m).map(|j| format!("xhat_{j}")));
    writeln!(out, "{}", header.join(","))?;
    for r in &report.rows {
        let mut fields = vec![r.t.to_string(), fmt17(r.reward), fmt17(r.gap)];
        fields.extend(r.price.iter().map(|v| fmt17(*v)));
        fields.extend(r.x_hat.iter().map(|v| fmt17(*v)));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::reward;
    use crate::scenario::{desk, desk_symmetric};

    fn transition(s: Vec<f64>, pi: Vec<f64>, reward: f64) -> Transition {
        Transition {
            s: MarketState(DVector::from_vec(s)),
            pi: PriceVector::new(pi).unwrap(),
            reward,
        }
    }

    fn small_params(seed: u64) -> PolicyParams {
        PolicyParams::with_hidden(1, 2, &[6, 4], 0.0, 5.0, seed).unwrap()
    }

    #[test]
    fn symmetric_prices_split_evenly() {
        let (_, market) = generate_state(&desk_symmetric(), 0, 0).unwrap();
        let z = DesiredDistribution::uniform(2);
        let (x_hat, r) = environment_step(&market, &PriceVector::uniform(2, 3.3), &z).unwrap();
        assert!((x_hat[0] - 0.5).abs() < 1e-9);
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn raising_a_price_moves_mass_away() {
        let (_, market) = generate_state(&desk(), 4, 0).unwrap();
        let z = desk().desired().unwrap();
        let base = PriceVector::new(vec![2.0, 2.5]).unwrap();
        let bumped = PriceVector::new(vec![2.001, 2.5]).unwrap();
        let (a, _) = environment_step(&market, &base, &z).unwrap();
        let (b, _) = environment_step(&market, &bumped, &z).unwrap();
        assert!(b[0] < a[0]);
    }

    #[test]
    fn zero_reward_batch_is_a_no_op() {
        let batch_data = vec![
            transition(vec![0.1, 0.2, -0.3, 0.4], vec![1.0, 2.0], 0.0),
            transition(vec![0.5, -0.2, 0.3, 0.1], vec![3.0, 0.5], 0.0),
        ];
        let batch: Vec<&Transition> = batch_data.iter().collect();
        for opt in [Optimizer::Plain, Optimizer::Adam] {
            let mut p = small_params(1);
            let before = p.clone();
            update_step(&mut p, &batch, 1e-3, 5, opt).unwrap();
            assert_eq!(p, before);
        }
    }

    #[test]
    fn single_step_moves_mean_towards_price() {
        let s = vec![0.1, 0.2, -0.3, 0.4];
        let mut p = small_params(2);
        let (mu0, _) = forward(&p, &MarketState(DVector::from_vec(s.clone()))).unwrap();
        let pi: Vec<f64> = mu0.iter().map(|v| v + 1.0).collect();
        let t = transition(s.clone(), pi, 1.0);
        update_step(&mut p, &[&t], 1e-3, 1, Optimizer::Plain).unwrap();
        let (mu1, _) = forward(&p, &MarketState(DVector::from_vec(s))).unwrap();
        assert!(mu1[0] > mu0[0] && mu1[1] > mu0[1]);
    }

    #[test]
    fn batch_objective_rarely_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut steps = 0;
        let mut drops = 0;
        for trial in 0..20 {
            let data: Vec<Transition> = (0..32)
                .map(|_| {
                    use rand::Rng;
                    transition(
                        (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        (0..2).map(|_| rng.random_range(0.0..5.0)).collect(),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect();
            let batch: Vec<&Transition> = data.iter().collect();
            let mut p = small_params(trial);
            let stats = update_step(&mut p, &batch, 1e-3, 20, Optimizer::Adam).unwrap();
            for w in stats.objectives.windows(2) {
                steps += 1;
                if w[1] < w[0] {
                    drops += 1;
                }
            }
        }
        assert!((drops as f64) < 0.05 * steps as f64, "{drops} of {steps}");
    }

    #[test]
    fn buffer_rejects_oversized_batch() {
        let mut b = Buffer::new();
        b.push(transition(vec![0.0; 4], vec![1.0, 1.0], 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample_batch(&mut rng, 2).is_err());
        assert!(b.push(transition(vec![0.0; 4], vec![1.0, 1.0], 1.5)).is_err());
    }

    #[test]
    fn exploration_only_run() {
        let cfg = TrainConfig {
            n_iter: 12,
            n_explore: 12,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = run_training(&desk(), &cfg).unwrap();
        assert_eq!(run.log.len(), 12);
        assert_eq!(run.buffer.len(), 12);
        assert!(run.log.iter().all(|r| r.phase == Phase::Explore));
        assert!(run.log.iter().all(|r| (0.0..=1.0).contains(&r.reward)));
        let rewards: Vec<f64> = run.log.iter().map(|r| r.reward).collect();
        for (k, r) in run.log.iter().enumerate() {
            assert!((r.ma100 - moving_average(&rewards, k + 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn short_runs_are_deterministic() {
        let cfg = TrainConfig {
            n_iter: 15,
            n_explore: 8,
            batch: 4,
            epochs: 2,
            optimizer: Optimizer::Adam,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = run_training(&desk(), &cfg).unwrap();
        let b = run_training(&desk(), &cfg).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_log_csv(&mut ca, &a.log, 2).unwrap();
        write_log_csv(&mut cb, &b.log, 2).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.log[8].phase, Phase::Learn);
        let text = String::from_utf8(ca).unwrap();
        assert!(text.starts_with("iter,reward,ma100,price_1,price_2,xhat_1,xhat_2,phase\n"));
        assert_eq!(text.lines().count(), 16);
    }

    #[test]
    fn untrained_policy_on_symmetric_market() {
        let mut p = PolicyParams::new(2, 2, 0.0, 5.0, 0).unwrap();
        p.set_flat(&DVector::zeros(p.n_params())).unwrap();
        let report = evaluate(&p, &desk_symmetric(), 3, 1).unwrap();
        for row in &report.rows {
            assert!((row.reward - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn evaluation_reward_matches_logged_share() {
        let p = PolicyParams::new(2, 2, 0.0, 5.0, 5).unwrap();
        let scenario = desk();
        let report = evaluate(&p, &scenario, 4, 2).unwrap();
        let z = scenario.desired().unwrap();
        for row in &report.rows {
            let (_, market) = generate_state(&scenario, 2, row.t).unwrap();
            let x = DVector::from_vec(row.x_hat.clone()) * market.total_fleet();
            let recomputed = reward(&x, &[market.total_fleet()], &z).unwrap();
            assert!((recomputed - row.reward).abs() <= 1e-12);
        }
    }
}
