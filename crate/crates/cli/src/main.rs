//! `evcharge` command-line driver.
//!
//! Exit status is 0 on success, 1 when the run fails (including infeasible
//! and unbounded instances) and 2 on malformed arguments.

mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use evcharge::bilevel::{self, build_program, default_beta, Mode, SolveOptions, Status, Strategy, MAX_DOUBLINGS};
use evcharge::equilibrium::{solve_vne, Scheme, SolverConfig};
use evcharge::exploration::{
    box_superset_with_vertices, compute_bounds, interior_identity_residual, membership_relaxed,
    sample_uniform_seeded, ExplorationBounds, PriceBox,
};
use evcharge::market::{reward, DesiredDistribution, MarketDocument, MarketInstance, PriceVector};
use evcharge::policy::PolicyParams;
use evcharge::scenario::{self, ScenarioConfig};
use evcharge::trainer::{self, fmt17, ExplorationSpace, Optimizer, TrainConfig};

use manifest::{ensure_parent, read_json, write_json, RunManifest};

/// Directory that receives outputs whose path was not given.
const OUT_ROOT_VAR: &str = "EVCHARGE_OUT";

#[derive(Parser)]
#[command(name = "evcharge", version, about = "Charging-price games: equilibria, exploration bounds, exact and learned pricing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario fixtures and generated market states.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Equilibrium of a market at fixed prices.
    SolveNe(SolveNeArgs),
    /// Samples a price region and audits equilibria against the exploration bounds.
    Explore(ExploreArgs),
    /// Trains a pricing policy.
    Train(TrainArgs),
    /// Plays a trained policy's mean price on fresh states.
    Evaluate(EvaluateArgs),
    /// Exact bilevel solve by big-M enumeration or branch-and-bound.
    SolveExact(SolveExactArgs),
    /// Exploration bounds and their box superset.
    Bounds(BoundsArgs),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Prints the built-in fixture names.
    List,
    /// Writes a built-in fixture as a scenario config.
    Fixture {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draws one market state and writes it as a snapshot.
    Gen {
        #[command(flatten)]
        source: ScenarioSource,
        #[arg(long)]
        seed: Option<u64>,
        /// Index of the state within the seeded stream.
        #[arg(long, default_value_t = 0)]
        t: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Scenario config, or the `config.json` written by `train`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in fixture name.
    #[arg(long)]
    fixture: Option<String>,
}

#[derive(Args)]
struct SolveNeArgs {
    /// Snapshot or any JSON holding `stations`, `companies` and `Z`.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    prices: Vec<f64>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::ProjectedGradient)]
    scheme: SchemeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// `theorem1` (alias `relaxed`) for the relaxed-polytope box, or `box:LO,HI`.
    #[arg(long, default_value = "theorem1")]
    space: SpaceArg,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Leading iterations with uniform prices.
    #[arg(long, default_value_t = 250)]
    explore: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Plain)]
    optimizer: OptimizerArg,
    /// Exploration region; defaults to the scenario's price range.
    #[arg(long)]
    space: Option<SpaceArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PathBuf,
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long, default_value_t = 100)]
    states: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveExactArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Feasibility)]
    mode: ModeArg,
    /// `auto` or a positive constant.
    #[arg(long, default_value = "auto")]
    beta: BetaArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    strategy: StrategyArg,
    /// Defaults to 20 with `--beta auto` and 0 otherwise.
    #[arg(long)]
    max_doublings: Option<usize>,
    /// Restrict prices to `[LO, HI]` per station.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true)]
    price_box: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    ProjectedGradient,
    Extragradient,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::ProjectedGradient => Scheme::ProjectedGradient,
            SchemeArg::Extragradient => Scheme::Extragradient,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Plain,
    Adam,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Plain => Optimizer::Plain,
            OptimizerArg::Adam => Optimizer::Adam,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Feasibility,
    Miqp,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Feasibility => Mode::Feasibility,
            ModeArg::Miqp => Mode::Miqp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Auto,
    Enumerate,
    BranchAndBound,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => Strategy::Auto,
            StrategyArg::Enumerate => Strategy::Enumerate,
            StrategyArg::BranchAndBound => Strategy::BranchAndBound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SpaceArg {
    Relaxed,
    Cube { lo: f64, hi: f64 },
}

impl FromStr for SpaceArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "theorem1" || s == "relaxed" {
            return Ok(Self::Relaxed);
        }
        let range = s
            .strip_prefix("box:")
            .ok_or_else(|| format!("expected `theorem1` or `box:LO,HI`, got {s:?}"))?;
        let (lo, hi) = range
            .split_once(',')
            .ok_or_else(|| format!("expected `box:LO,HI`, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if !(lo < hi) {
            return Err(format!("box bounds need LO < HI, got {lo} and {hi}"));
        }
        Ok(Self::Cube { lo, hi })
    }
}

impl SpaceArg {
    fn training_space(self, m: usize) -> ExplorationSpace {
        match self {
            Self::Relaxed => ExplorationSpace::Relaxed,
            Self::Cube { lo, hi } => ExplorationSpace::Box {
                lo: vec![lo; m],
                hi: vec![hi; m],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BetaArg {
    Auto,
    Value(f64),
}

impl FromStr for BetaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Self::Value(v)),
            _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
        }
    }
}

/// Either file accepted by `--config`.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioFile {
    Plain(ScenarioConfig),
    Run { scenario: ScenarioConfig },
}

/// `config.json` written by `train`.
#[derive(Serialize)]
struct RunConfig<'a> {
    scenario: &'a ScenarioConfig,
    train: &'a TrainConfig,
}

/// Exploration bounds with the coordinate box and the LP vertices attaining it.
#[derive(Serialize, Deserialize)]
struct BoundsReport {
    bounds: ExplorationBounds,
    #[serde(rename = "box")]
    price_box: PriceBox,
    lower_vertices: Vec<Vec<f64>>,
    upper_vertices: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ExploreSummary {
    samples: usize,
    interior: usize,
    members: usize,
    /// Interior equilibria whose prices fall outside the relaxed polytope.
    interior_outside: usize,
    worst_identity_residual: f64,
    mean_reward: f64,
    best_reward: f64,
    best_price: Vec<f64>,
}

impl ScenarioSource {
    fn load(&self, man: &mut RunManifest) -> Result<ScenarioConfig> {
        let cfg = match (&self.config, &self.fixture) {
            (Some(path), _) => {
                man.config(path);
                match read_json::<ScenarioFile>(path)? {
                    ScenarioFile::Plain(c) => c,
                    ScenarioFile::Run { scenario } => scenario,
                }
            }
            (None, Some(name)) => scenario::fixture(name)
                .ok_or_else(|| anyhow!("unknown fixture {name:?}; known: {}", fixture_names()))?,
            (None, None) => bail!("either --config or --fixture is required"),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fixture_names() -> String {
    scenario::canonical_fixtures()
        .into_iter()
        .map(|f| f.name)
        .collect::<Vec<_>>()
        .join(", ")
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn out_or(out: Option<PathBuf>, default: impl FnOnce() -> String) -> PathBuf {
    out.unwrap_or_else(|| out_root().join(default()))
}

fn resolve_seed(seed: Option<u64>, man: &mut RunManifest) -> u64 {
    let (seed, derived) = match seed {
        Some(s) => (s, false),
        None => (rand::random(), true),
    };
    if derived {
        eprintln!("seed: {seed} (derived)");
    }
    man.seed(seed, derived);
    seed
}

fn load_market(path: &Path, man: &mut RunManifest) -> Result<MarketDocument> {
    man.config(path);
    read_json(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn bool01(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Order-preserving map over `items` on up to `jobs` threads.
fn parallel_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let chunk = items.len().div_ceil(jobs.max(1)).max(1);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().map_err(|_| anyhow!("worker thread panicked"))??);
        }
        Ok(out)
    })
}

fn run_scenario(cmd: ScenarioCmd) -> Result<()> {
    match cmd {
        ScenarioCmd::List => {
            for f in scenario::canonical_fixtures() {
                println!("{}\t{} stations, {} companies", f.name, f.n_stations(), f.n_companies());
            }
            Ok(())
        }
        ScenarioCmd::Fixture { name, out } => {
            let mut man = RunManifest::start("scenario fixture");
            let cfg = scenario::fixture(&name)
                .ok_or_else(|| anyhow!("unknown fixture {name:?}; known: {}", fixture_names()))?;
            let out = out_or(out, || format!("{name}.json"));
            write_json(&out, &cfg)?;
            man.output(&out);
            man.finish_beside(&out)?;
            println!("{}", out.display());
            Ok(())
        }
        ScenarioCmd::Gen { source, seed, t, out } => {
            let mut man = RunManifest::start("scenario gen");
            let cfg = source.load(&mut man)?;
            let seed = resolve_seed(seed, &mut man);
            let snap = scenario::snapshot(&cfg, seed, t)?;
            let out = out_or(out, || format!("{}-{seed}-{t}.json", cfg.name));
            write_json(&out, &snap)?;
            man.output(&out);
            man.finish_beside(&out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn run_solve_ne(a: SolveNeArgs) -> Result<()> {
    let mut man = RunManifest::start("solve-ne");
    let doc = load_market(&a.scenario, &mut man)?;
    let pi = PriceVector::new(a.prices)?;
    let cfg = SolverConfig {
        step: None,
        tol: a.tol,
        max_iter: a.max_iter,
        scheme: a.scheme.into(),
    };
    let res = solve_vne(&doc.market, &pi, &cfg)?;
    let r = reward(&res.x_star, &doc.market.fleets(), &doc.z)?;
    let out = out_or(a.out, || "ne.json".into());
    write_json(&out, &res)?;
    man.output(&out);
    man.finish_beside(&out)?;
    let x_hat: Vec<String> = res.x_hat.iter().map(|v| fmt17(*v)).collect();
    println!(
        "reward {} x_hat [{}] residual {:e} iterations {} interior {}",
        fmt17(r),
        x_hat.join(", "),
        res.residual,
        res.iterations,
        res.interior
    );
    Ok(())
}

fn bounds_report(market: &MarketInstance) -> Result<BoundsReport> {
    let bounds = compute_bounds(market);
    let sup = box_superset_with_vertices(&bounds)?;
    Ok(BoundsReport {
        lower_vertices: sup.lower.iter().map(|v| v.iter().copied().collect()).collect(),
        upper_vertices: sup.upper.iter().map(|v| v.iter().copied().collect()).collect(),
        price_box: sup.bounds,
        bounds,
    })
}

fn run_bounds(a: BoundsArgs) -> Result<()> {
    let mut man = RunManifest::start("bounds");
    let doc = load_market(&a.scenario, &mut man)?;
    let report = bounds_report(&doc.market)?;
    let out = out_or(a.out, || "bounds.json".into());
    write_json(&out, &report)?;
    man.output(&out);
    man.finish_beside(&out)?;
    println!(
        "alpha {} gamma {} Gamma {}",
        fmt17(report.bounds.alpha),
        fmt17(report.bounds.gamma),
        fmt17(report.bounds.gamma_upper)
    );
    for j in 0..report.price_box.dim() {
        println!(
            "price_{} in [{}, {}]",
            j + 1,
            fmt17(report.price_box.lo[j]),
            fmt17(report.price_box.hi[j])
        );
    }
    Ok(())
}

struct Probe {
    interior: bool,
    member: bool,
    reward: f64,
    identity: Option<f64>,
    x_hat: Vec<f64>,
}

fn probe(
    market: &MarketInstance,
    bounds: &ExplorationBounds,
    z: &DesiredDistribution,
    pi: &PriceVector,
) -> Result<Probe> {
    let res = solve_vne(market, pi, &SolverConfig::default())?;
    let identity = if res.interior {
        Some(interior_identity_residual(market, bounds, &res.x_star, pi)?)
    } else {
        None
    };
    Ok(Probe {
        interior: res.interior,
        member: membership_relaxed(bounds, pi),
        reward: reward(&res.x_star, &market.fleets(), z)?,
        identity,
        x_hat: res.x_hat.iter().copied().collect(),
    })
}

fn run_explore(a: ExploreArgs) -> Result<()> {
    let mut man = RunManifest::start("explore");
    let doc = load_market(&a.scenario, &mut man)?;
    let seed = resolve_seed(a.seed, &mut man);
    let market = &doc.market;
    let m = market.n_stations();
    let report = match a.space {
        SpaceArg::Relaxed => bounds_report(market)?,
        SpaceArg::Cube { lo, hi } => BoundsReport {
            bounds: compute_bounds(market),
            price_box: PriceBox::cube(m, lo, hi)?,
            lower_vertices: Vec::new(),
            upper_vertices: Vec::new(),
        },
    };
    let prices = sample_uniform_seeded(&report.price_box, seed, a.samples);
    let probes = parallel_map(&prices, a.jobs, |pi| probe(market, &report.bounds, &doc.z, pi))?;

    let dir = out_or(a.out, || format!("explore-{seed}"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("samples.csv");
    let mut w = create(&csv_path)?;
    let mut header = vec!["sample".to_string()];
    header.extend((1..=m).map(|j| format!("price_{j}")));
    header.extend(["interior", "member", "reward", "identity_residual"].map(String::from));
    header.extend((1..=m).map(|j| format!("xhat_{j}")));
    writeln!(w, "{}", header.join(","))?;
    for (k, (pi, p)) in prices.iter().zip(&probes).enumerate() {
        let mut fields = vec![k.to_string()];
        fields.extend(pi.iter().map(|v| fmt17(*v)));
        fields.push(bool01(p.interior).into());
        fields.push(bool01(p.member).into());
        fields.push(fmt17(p.reward));
        fields.push(p.identity.map(fmt17).unwrap_or_default());
        fields.extend(p.x_hat.iter().map(|v| fmt17(*v)));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;

    let best = probes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.reward.total_cmp(&b.1.reward));
    let summary = ExploreSummary {
        samples: probes.len(),
        interior: probes.iter().filter(|p| p.interior).count(),
        members: probes.iter().filter(|p| p.member).count(),
        interior_outside: probes.iter().filter(|p| p.interior && !p.member).count(),
        worst_identity_residual: probes
            .iter()
            .filter_map(|p| p.identity)
            .fold(0.0, f64::max),
        mean_reward: probes.iter().map(|p| p.reward).sum::<f64>() / probes.len().max(1) as f64,
        best_reward: best.map_or(0.0, |b| b.1.reward),
        best_price: best.map_or_else(Vec::new, |b| prices[b.0].to_vec()),
    };
    let bounds_path = dir.join("bounds.json");
    let summary_path = dir.join("summary.json");
    write_json(&bounds_path, &report)?;
    write_json(&summary_path, &summary)?;
    for p in [&csv_path, &bounds_path, &summary_path] {
        man.output(p);
    }
    man.finish_dir(&dir)?;
    println!(
        "samples {} interior {} members {} interior-outside {} worst identity residual {:e} best reward {}",
        summary.samples,
        summary.interior,
        summary.members,
        summary.interior_outside,
        summary.worst_identity_residual,
        fmt17(summary.best_reward)
    );
    println!("{}", dir.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut man = RunManifest::start("train");
    let scenario = a.source.load(&mut man)?;
    let seed = resolve_seed(a.seed, &mut man);
    let m = scenario.n_stations();
    let cfg = TrainConfig {
        n_iter: a.iters,
        n_explore: a.explore,
        batch: a.batch,
        epochs: a.epochs,
        lr: a.lr,
        optimizer: a.optimizer.into(),
        seed,
        exploration: a.space.map(|s| s.training_space(m)),
    };
    let quiet = a.quiet;
    let run = trainer::run_training_with(&scenario, &cfg, |row| {
        if !quiet && row.iter % 100 == 0 {
            eprintln!("iter {} reward {:.4} ma100 {:.4}", row.iter, row.reward, row.ma100);
        }
    })?;

    let dir = out_or(a.out, || format!("train-{seed}"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let log_path = dir.join("log.csv");
    let mut w = create(&log_path)?;
    trainer::write_log_csv(&mut w, &run.log, m)?;
    w.flush()?;
    let policy_path = dir.join("policy.json");
    let config_path = dir.join("config.json");
    write_json(&policy_path, &run.params)?;
    write_json(
        &config_path,
        &RunConfig {
            scenario: &scenario,
            train: &cfg,
        },
    )?;
    for p in [&log_path, &policy_path, &config_path] {
        man.output(p);
    }
    man.finish_dir(&dir)?;
    if let Some(last) = run.log.last() {
        println!("iterations {} final ma100 {}", last.iter, fmt17(last.ma100));
    }
    println!("{}", dir.display());
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut man = RunManifest::start("evaluate");
    let scenario = a.source.load(&mut man)?;
    man.config(&a.policy);
    let params: PolicyParams = read_json(&a.policy)?;
    if params.n_companies != scenario.n_companies() || params.n_stations != scenario.n_stations() {
        bail!(
            "policy shape {}x{} does not match scenario {}x{}",
            params.n_companies,
            params.n_stations,
            scenario.n_companies(),
            scenario.n_stations()
        );
    }
    let seed = resolve_seed(a.seed, &mut man);
    let report = trainer::evaluate(&params, &scenario, a.states, seed)?;
    let out = out_or(a.out, || format!("eval-{seed}.csv"));
    let mut w = create(&out)?;
    trainer::write_eval_csv(&mut w, &report, scenario.n_stations())?;
    w.flush()?;
    man.output(&out);
    man.finish_beside(&out)?;
    println!("states {} mean reward {}", report.rows.len(), fmt17(report.mean_reward));
    Ok(())
}

fn run_solve_exact(a: SolveExactArgs) -> Result<()> {
    let mut man = RunManifest::start("solve-exact");
    let doc = load_market(&a.scenario, &mut man)?;
    let market = &doc.market;
    let (beta, doublings) = match a.beta {
        BetaArg::Auto => (default_beta(market), a.max_doublings.unwrap_or(MAX_DOUBLINGS)),
        BetaArg::Value(b) => (b, a.max_doublings.unwrap_or(0)),
    };
    let mut prog = build_program(market, &doc.z, beta)?;
    if let Some(range) = &a.price_box {
        let &[lo, hi] = &range[..] else {
            bail!("--price-box takes LO,HI");
        };
        prog = prog.with_price_box(PriceBox::cube(market.n_stations(), lo, hi)?)?;
    }
    let opts = SolveOptions {
        strategy: a.strategy.into(),
        max_doublings: doublings,
    };
    let sol = bilevel::solve(&prog, a.mode.into(), opts)?;
    let out = out_or(a.out, || "solution.json".into());
    write_json(&out, &sol)?;
    man.output(&out);
    man.finish_beside(&out)?;
    let Some(asg) = sol.assignment.as_ref().filter(|_| sol.status != Status::Infeasible) else {
        bail!(
            "infeasible: no price vector induces the target distribution (beta {:e}, {} nodes)",
            sol.beta_used,
            sol.nodes
        );
    };
    let replay = solve_vne(market, &asg.pi, &SolverConfig::default())?;
    let r = reward(&replay.x_star, &market.fleets(), &doc.z)?;
    let pi: Vec<String> = asg.pi.iter().map(|v| fmt17(*v)).collect();
    println!(
        "status {:?} price [{}] objective {:e} reward {} beta {:e} nodes {} leaves {}",
        sol.status,
        pi.join(", "),
        asg.objective,
        fmt17(r),
        sol.beta_used,
        sol.nodes,
        sol.leaves
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scenario(cmd) => run_scenario(cmd),
        Command::SolveNe(a) => run_solve_ne(a),
        Command::Explore(a) => run_explore(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::SolveExact(a) => run_solve_exact(a),
        Command::Bounds(a) => run_bounds(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
