//! Gaussian pricing policy `π ~ N(μ(s), diag σ(s)²)`.
//!
//! Two rectifier MLPs map the market state to the mean and the standard
//! deviation. The mean head is a logistic squashed into `[lo, hi]`, the
//! deviation head a softplus plus a floor. Gradients of the log-density are
//! computed by hand-written reverse-mode passes; samples travel as matrix
//! columns so a whole batch goes through one matrix product per layer.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::market::PriceVector;

pub const HIDDEN: [usize; 3] = [256, 64, 16];
pub const SIGMA_MIN: f64 = 1e-3;

/// Exogenous market state `s = col(d^1..d^N, r_1..r_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarketState(#[serde(with = "crate::serde_vec")] pub DVector<f64>);

impl MarketState {
    pub fn new(s: DVector<f64>, n: usize, m: usize) -> Result<Self> {
        check_dim("market state", 2 * n * m, s.len())?;
        Ok(Self(s))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    #[serde(with = "crate::serde_vec::matrix")]
    pub w: DMatrix<f64>,
    #[serde(with = "crate::serde_vec")]
    pub b: DVector<f64>,
}

/// Rectifier network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Pre-activations and activations kept for the backward pass.
struct Trace {
    /// `acts[0]` is the input, `acts[k]` the output of layer `k − 1`.
    acts: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Weights `U(±1/√fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| dist.sample(rng)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeroed(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                w: DMatrix::zeros(w[1], w[0]),
                b: DVector::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn forward_trace(&self, x: DMatrix<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = vec![x];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &acts[k];
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            let a = if k == last {
                z.clone()
            } else {
                z.map(|v| v.max(0.0))
            };
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Output for every column of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_trace(x.clone())
            .acts
            .pop()
            .expect("network has layers")
    }

    /// Accumulates parameter gradients into `grad` (same layout as
    /// [`Mlp::write_flat`]) given `delta = ∂L/∂output`.
    fn backward(&self, trace: &Trace, mut delta: DMatrix<f64>, grad: &mut [f64]) {
        let offsets = self.offsets();
        for k in (0..self.layers.len()).rev() {
            let (w_off, b_off) = offsets[k];
            let layer = &self.layers[k];
            let dw = &delta * trace.acts[k].transpose();
            // Column-major, matching `write_flat`.
            for (g, v) in grad[w_off..w_off + dw.len()].iter_mut().zip(dw.iter()) {
                *g += v;
            }
            for r in 0..delta.nrows() {
                grad[b_off + r] += delta.row(r).sum();
            }
            if k > 0 {
                let mut prev = layer.w.transpose() * &delta;
                let z = &trace.pre[k - 1];
                prev.zip_apply(z, |d, zv| {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off;
                let b = off + l.w.len();
                off = b + l.b.len();
                (w, b)
            })
            .collect()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&src[off..off + n]);
            off += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&src[off..off + n]);
            off += n;
        }
        off
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub n_companies: usize,
    pub n_stations: usize,
    pub mu_net: Mlp,
    pub sigma_net: Mlp,
    pub price_lo: f64,
    pub price_hi: f64,
    pub sigma_min: f64,
    /// Inputs are standardised as `(s − shift) / scale` before the networks.
    #[serde(with = "crate::serde_vec")]
    pub input_shift: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub input_scale: DVector<f64>,
    pub seed: u64,
}

impl PolicyParams {
    /// Networks `2NM → 256 → 64 → 16 → M` initialised from `seed`.
    pub fn new(n: usize, m: usize, price_lo: f64, price_hi: f64, seed: u64) -> Result<Self> {
        Self::with_hidden(n, m, &HIDDEN, price_lo, price_hi, seed)
    }

    pub fn with_hidden(
        n: usize,
        m: usize,
        hidden: &[usize],
        price_lo: f64,
        price_hi: f64,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Invalid("market shape must be nonempty".into()));
        }
        if !(price_lo.is_finite() && price_hi.is_finite() && price_lo < price_hi) {
            return Err(Error::Invalid(format!(
                "price range [{price_lo}, {price_hi}] is not a proper interval"
            )));
        }
        let sizes: Vec<usize> = std::iter::once(2 * n * m)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(m))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu_net = Mlp::init(&sizes, &mut rng);
        let sigma_net = Mlp::init(&sizes, &mut rng);
        Ok(Self {
            n_companies: n,
            n_stations: m,
            mu_net,
            sigma_net,
            price_lo,
            price_hi,
            sigma_min: SIGMA_MIN,
            input_shift: DVector::zeros(2 * n * m),
            input_scale: DVector::from_element(2 * n * m, 1.0),
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_companies * self.n_stations
    }

    pub fn n_params(&self) -> usize {
        self.mu_net.n_params() + self.sigma_net.n_params()
    }

    /// Sets the standardisation from the mean and deviation of `states`.
    /// Features with deviation below `1e-8` keep scale 1.
    pub fn fit_input_normalization(&mut self, states: &[&MarketState]) -> Result<()> {
        let dim = self.input_dim();
        if states.is_empty() {
            return Err(Error::Invalid("no states to normalise".into()));
        }
        for s in states {
            check_dim("market state", dim, s.len())?;
        }
        let k = states.len() as f64;
        let mean = states.iter().fold(DVector::zeros(dim), |acc, s| acc + &s.0) / k;
        let var = states.iter().fold(DVector::zeros(dim), |acc, s| {
            acc + (&s.0 - &mean).map(|v| v * v)
        }) / k;
        self.input_shift = mean;
        self.input_scale = var.map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 });
        Ok(())
    }

    /// All weights and biases, mean network first.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.mu_net.write_flat(&mut out);
        self.sigma_net.write_flat(&mut out);
        DVector::from_vec(out)
    }

    pub fn set_flat(&mut self, flat: &DVector<f64>) -> Result<()> {
        check_dim("flat parameters", self.n_params(), flat.len())?;
        let used = self.mu_net.read_flat(flat.as_slice());
        self.sigma_net.read_flat(&flat.as_slice()[used..]);
        Ok(())
    }

    fn inputs(&self, states: &[&MarketState]) -> Result<DMatrix<f64>> {
        let dim = self.input_dim();
        let mut x = DMatrix::zeros(dim, states.len());
        for (k, s) in states.iter().enumerate() {
            check_dim("market state", dim, s.len())?;
            let col = (&s.0 - &self.input_shift).component_div(&self.input_scale);
            x.set_column(k, &col);
        }
        Ok(x)
    }

    fn mu_of(&self, o: f64) -> f64 {
        self.price_lo + (self.price_hi - self.price_lo) * sigmoid(o)
    }

    fn sigma_of(&self, o: f64) -> f64 {
        softplus(o) + self.sigma_min
    }

    /// Means and deviations as `M × B` matrices.
    pub fn forward_batch(&self, states: &[&MarketState]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let x = self.inputs(states)?;
        let mu = self.mu_net.forward(&x).map(|o| self.mu_of(o));
        let sigma = self.sigma_net.forward(&x).map(|o| self.sigma_of(o));
        Ok((mu, sigma))
    }

    /// Reward-weighted log-likelihood `Σ_k w_k log ρ(π_k | s_k)` and its
    /// gradient in the layout of [`PolicyParams::to_flat`].
    pub fn weighted_log_prob_grad(
        &self,
        states: &[&MarketState],
        prices: &[&PriceVector],
        weights: &[f64],
    ) -> Result<(f64, DVector<f64>)> {
        let b = states.len();
        check_dim("prices", b, prices.len())?;
        check_dim("weights", b, weights.len())?;
        let m = self.n_stations;
        let x = self.inputs(states)?;
        let mu_trace = self.mu_net.forward_trace(x.clone());
        let sig_trace = self.sigma_net.forward_trace(x);
        let o_mu = mu_trace.acts.last().expect("layers");
        let o_sig = sig_trace.acts.last().expect("layers");

        let mut d_mu = DMatrix::zeros(m, b);
        let mut d_sig = DMatrix::zeros(m, b);
        let mut objective = 0.0;
        let span = self.price_hi - self.price_lo;
        for k in 0..b {
            check_dim("price vector", m, prices[k].len())?;
            let w = weights[k];
            for j in 0..m {
                let s_mu = sigmoid(o_mu[(j, k)]);
                let mu = self.price_lo + span * s_mu;
                let sigma = self.sigma_of(o_sig[(j, k)]);
                let diff = prices[k][j] - mu;
                objective += w * (-sigma.ln() - diff * diff / (2.0 * sigma * sigma));
                let dl_dmu = diff / (sigma * sigma);
                let dl_dsigma = -1.0 / sigma + diff * diff / (sigma * sigma * sigma);
                d_mu[(j, k)] = w * dl_dmu * span * s_mu * (1.0 - s_mu);
                d_sig[(j, k)] = w * dl_dsigma * sigmoid(o_sig[(j, k)]);
            }
            objective -= w * 0.5 * m as f64 * (2.0 * PI).ln();
        }
        let mut grad = vec![0.0; self.n_params()];
        let split = self.mu_net.n_params();
        self.mu_net.backward(&mu_trace, d_mu, &mut grad[..split]);
        self.sigma_net.backward(&sig_trace, d_sig, &mut grad[split..]);
        if let Some(bad) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("policy gradient entry {bad}")));
        }
        Ok((objective, DVector::from_vec(grad)))
    }
}

/// Mean and standard deviation of the policy at `s`.
pub fn forward(params: &PolicyParams, s: &MarketState) -> Result<(DVector<f64>, DVector<f64>)> {
    let (mu, sigma) = params.forward_batch(&[s])?;
    Ok((mu.column(0).into_owned(), sigma.column(0).into_owned()))
}

/// Draws `π = μ + σ ⊙ ξ` with standard normal `ξ`; no clipping.
pub fn sample<R: Rng + ?Sized>(
    params: &PolicyParams,
    s: &MarketState,
    rng: &mut R,
) -> Result<PriceVector> {
    let (mu, sigma) = forward(params, s)?;
    let xi = DVector::from_fn(mu.len(), |_, _| StandardNormal.sample(rng));
    Ok(PriceVector(mu + sigma.component_mul(&xi)))
}

/// Exact diagonal-Gaussian log-density, including `−(M/2) ln 2π`.
pub fn log_prob(params: &PolicyParams, s: &MarketState, pi: &PriceVector) -> Result<f64> {
    check_dim("price vector", params.n_stations, pi.len())?;
    let (mu, sigma) = forward(params, s)?;
    let m = mu.len() as f64;
    let quad: f64 = (0..mu.len())
        .map(|j| -sigma[j].ln() - (pi[j] - mu[j]).powi(2) / (2.0 * sigma[j] * sigma[j]))
        .sum();
    Ok(quad - 0.5 * m * (2.0 * PI).ln())
}

/// Gradient of [`log_prob`] with respect to every parameter.
pub fn grad_log_prob(params: &PolicyParams, s: &MarketState, pi: &PriceVector) -> Result<DVector<f64>> {
    Ok(params.weighted_log_prob_grad(&[s], &[pi], &[1.0])?.1)
}
