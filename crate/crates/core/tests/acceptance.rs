//! Acceptance criteria 1 to 10. Each test prints one `PASS`/`FAIL` line.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evcharge::bilevel::{
    branch_and_bound, build_program, default_beta, enumerate, solve_feasibility, Mode, Status,
};
use evcharge::equilibrium::{
    is_interior, solve_interior_kkt, solve_vne, verify_kkt, SolverConfig, ACTIVE_MARGIN,
    KKT_TOLERANCE,
};
use evcharge::exploration::{
    box_superset_with_vertices, compute_bounds, interior_identity_residual, membership_relaxed,
    PriceBox,
};
use evcharge::market::{
    assemble_market, reward, reward_from_aggregate, Company, DesiredDistribution, MarketInstance,
    PriceVector, StationSet,
};
use evcharge::policy::{grad_log_prob, log_prob, MarketState, PolicyParams};
use evcharge::scenario::desk;
use evcharge::trainer::{run_training, write_log_csv, Optimizer, TrainConfig, TrainingRun};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{verdict}] {name}: {detail}");
}

fn random_market(rng: &mut ChaCha8Rng, n: usize, m: usize, fleet: (u32, u32)) -> MarketInstance {
    let stations = StationSet {
        tau: (0..m).map(|_| rng.random_range(0.0..2.0)).collect(),
        c: (0..m).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    let companies = (0..n)
        .map(|_| {
            Company::simplex(
                rng.random_range(fleet.0..=fleet.1),
                (0..m).map(|_| rng.random_range(0.5..1.5)).collect(),
                (0..m).map(|_| rng.random_range(0.0..2.0)).collect(),
                (0..m).map(|_| rng.random_range(0.0..2.0)).collect(),
            )
        })
        .collect();
    assemble_market(stations, companies).unwrap()
}

fn random_prices(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64) -> PriceVector {
    PriceVector(DVector::from_fn(m, |_, _| rng.random_range(lo..hi)))
}

/// Instances whose equilibrium at the drawn price is interior.
fn interior_instances(count: usize, seed: u64) -> Vec<(MarketInstance, PriceVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(1..=3);
        let mk = random_market(&mut rng, n, m, (40, 120));
        let pi = random_prices(&mut rng, m, 0.0, 5.0);
        if solve_interior_kkt(&mk, &pi).unwrap().is_some() {
            out.push((mk, pi));
        }
    }
    out
}

#[test]
fn criterion_01_equilibrium_matches_interior_oracle() {
    let instances = interior_instances(100, 101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (mk, pi) in &instances {
        let res = solve_vne(mk, pi, &SolverConfig::default()).unwrap();
        let oracle = solve_interior_kkt(mk, pi).unwrap().unwrap();
        worst = worst.max((&res.x_star - &oracle.x).amax());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && elapsed < Duration::from_secs(5);
    report(
        1,
        "equilibrium vs interior KKT oracle",
        pass,
        format!("max |dx| = {worst:.3e} over 100 instances in {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_kkt_certification() {
    let instances = interior_instances(100, 101);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (mk, pi) in &instances {
        let res = solve_vne(mk, pi, &SolverConfig::default()).unwrap();
        let kkt = verify_kkt(mk, &res, pi).unwrap();
        worst = worst.max(kkt.worst());
        if !kkt.pass || kkt.worst() > KKT_TOLERANCE {
            failures += 1;
        }
    }
    let pass = failures == 0;
    report(
        2,
        "KKT certification",
        pass,
        format!("{failures} failures, worst residual {worst:.3e} (tol {KKT_TOLERANCE:e})"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_exploration_necessity() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut interior = 0;
    let mut counterexamples = 0;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(1..=3);
        let mk = random_market(&mut rng, n, m, (20, 300));
        let bounds = compute_bounds(&mk);
        for _ in 0..20 {
            let pi = random_prices(&mut rng, m, -50.0, 50.0);
            let res = solve_vne(&mk, &pi, &SolverConfig::default()).unwrap();
            if !is_interior(&mk, &res.x_star, ACTIVE_MARGIN) {
                continue;
            }
            interior += 1;
            if !membership_relaxed(&bounds, &pi) {
                counterexamples += 1;
            }
            let resid = interior_identity_residual(&mk, &bounds, &res.x_star, &pi).unwrap();
            worst_identity = worst_identity.max(resid);
        }
    }
    let pass = interior > 0 && counterexamples == 0 && worst_identity <= 1e-8;
    report(
        3,
        "exploration necessity",
        pass,
        format!(
            "{interior} interior equilibria of 2000 draws, {counterexamples} counterexamples, \
             identity residual {worst_identity:.3e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_box_containment() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut instances = 0;
    let mut outside = 0;
    let mut bad_vertices = 0;
    let mut accepted_total = 0;
    while instances < 20 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(2..=3);
        let mk = random_market(&mut rng, n, m, (40, 120));
        let bounds = compute_bounds(&mk);
        let Ok(sup) = box_superset_with_vertices(&bounds) else {
            continue;
        };
        instances += 1;
        for v in sup.lower.iter().chain(&sup.upper) {
            if !membership_relaxed(&bounds, &PriceVector(v.clone())) {
                bad_vertices += 1;
            }
        }
        let (lo, hi) = (&sup.bounds.lo, &sup.bounds.hi);
        let wide = PriceBox::new(
            (0..m).map(|j| lo[j] - 0.5 * (hi[j] - lo[j])).collect(),
            (0..m).map(|j| hi[j] + 0.5 * (hi[j] - lo[j])).collect(),
        )
        .unwrap();
        let tol = 1e-9 * (1.0 + lo.iter().chain(hi).fold(0.0_f64, |a, v| a.max(v.abs())));
        let mut accepted = 0;
        while accepted < 1000 {
            let pi = PriceVector(DVector::from_fn(m, |j, _| {
                rng.random_range(wide.lo[j]..wide.hi[j])
            }));
            if membership_relaxed(&bounds, &pi) {
                accepted += 1;
                if !sup.bounds.contains(&pi.to_vec(), tol) {
                    outside += 1;
                }
            }
        }
        accepted_total += accepted;
    }
    let pass = outside == 0 && bad_vertices == 0;
    report(
        4,
        "box superset containment",
        pass,
        format!(
            "{accepted_total} polytope samples, {outside} outside the box, \
             {bad_vertices} non-member vertices"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_exact_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    let mut feasible_failures = 0;
    for _ in 0..20 {
        let m = rng.random_range(2..=3);
        let n = rng.random_range(1..=2);
        let mk = random_market(&mut rng, n, m, (20, 60));
        let pi0 = random_prices(&mut rng, m, 0.0, 5.0);
        let res = solve_vne(&mk, &pi0, &SolverConfig::default()).unwrap();
        let z = DesiredDistribution::new(res.x_hat.iter().copied().collect()).unwrap();
        let prog = build_program(&mk, &z, default_beta(&mk)).unwrap();
        let sol = solve_feasibility(&prog).unwrap();
        match (sol.status, sol.assignment) {
            (Status::Feasible, Some(a)) => {
                let replay = solve_vne(&mk, &a.pi, &SolverConfig::default()).unwrap();
                let r = reward(&replay.x_star, &mk.fleets(), &z).unwrap();
                worst = worst.max((1.0 - r).abs());
            }
            _ => feasible_failures += 1,
        }
    }

    let mut infeasible_ok = 0;
    for _ in 0..20 {
        let m = rng.random_range(2..=3);
        let n = rng.random_range(1..=2);
        let stations = StationSet {
            tau: vec![0.0; m],
            c: (0..m).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let fleets: Vec<u32> = (0..n).map(|_| rng.random_range(20..=60)).collect();
        let z0 = rng.random_range(0.4..0.7);
        let mut z: Vec<f64> = vec![(1.0 - z0) / (m - 1) as f64; m];
        z[0] = z0;
        // Station 0 can hold at most half of its target share.
        let companies = fleets
            .iter()
            .map(|&f| {
                Company::simplex(
                    f,
                    (0..m).map(|_| rng.random_range(0.5..1.5)).collect(),
                    vec![0.0; m],
                    vec![0.0; m],
                )
                .with_cap(0, 0.5 * z0 * f as f64)
            })
            .collect();
        let mk = assemble_market(stations, companies).unwrap();
        let z = DesiredDistribution::new(z).unwrap();
        let prog = build_program(&mk, &z, default_beta(&mk)).unwrap();
        if solve_feasibility(&prog).unwrap().status == Status::Infeasible {
            infeasible_ok += 1;
        }
    }
    let pass = feasible_failures == 0 && worst <= 1e-6 && infeasible_ok == 20;
    report(
        5,
        "exact program round trip",
        pass,
        format!(
            "feasible: {} of 20 solved, max |1 - R| = {worst:.3e}; infeasible: {infeasible_ok} of 20 reported",
            20 - feasible_failures
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_branch_and_bound_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    let mut count = 0;
    while count < 20 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(1..=3);
        if n * m > 12 {
            continue;
        }
        count += 1;
        let mut mk = random_market(&mut rng, n, m, (10, 40));
        if rng.random_bool(0.5) {
            let companies = mk
                .companies()
                .iter()
                .map(|c| c.clone().with_cap(0, 0.3 * c.fleet as f64))
                .collect();
            mk = assemble_market(mk.stations().clone(), companies).unwrap();
        }
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let z = DesiredDistribution::new(raw.iter().map(|v| v / sum).collect()).unwrap();
        let prog = build_program(&mk, &z, default_beta(&mk)).unwrap();
        assert!(prog.n_binaries() <= 12);
        let e = enumerate(&prog, prog.beta, Mode::Miqp).unwrap().best;
        let b = branch_and_bound(&prog, prog.beta, Mode::Miqp).unwrap().best;
        let same = match (&e, &b) {
            (Some(e), Some(b)) => e.objective == b.objective,
            (None, None) => true,
            _ => false,
        };
        if !same {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        6,
        "branch-and-bound vs enumeration",
        pass,
        format!("{mismatches} objective mismatches over 20 instances"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..50 {
        let (n, m) = (rng.random_range(1..=3), rng.random_range(2..=4));
        let mut p = PolicyParams::new(n, m, 0.0, 5.0, trial).unwrap();
        for net in [&mut p.mu_net, &mut p.sigma_net] {
            for layer in &mut net.layers {
                layer.b = DVector::from_fn(layer.b.len(), |_, _| rng.random_range(-0.2..0.2));
            }
        }
        let s = MarketState(DVector::from_fn(2 * n * m, |_, _| rng.random_range(-2.0..2.0)));
        let pi = random_prices(&mut rng, m, 0.0, 5.0);
        let g = grad_log_prob(&p, &s, &pi).unwrap();
        let theta = p.to_flat();
        let total = theta.len();
        // The output layers of both networks in full, plus a random spread elsewhere.
        let mu_len = p.mu_net.n_params();
        let out_mu = p.mu_net.layers.last().map(|l| l.w.len() + l.b.len()).unwrap();
        let out_sigma = p.sigma_net.layers.last().map(|l| l.w.len() + l.b.len()).unwrap();
        let mut coords: Vec<usize> = (mu_len - out_mu..mu_len)
            .chain(total - out_sigma..total)
            .collect();
        coords.extend((0..200).map(|_| rng.random_range(0..total)));
        let mut q = p.clone();
        for &k in &coords {
            let mut t = theta.clone();
            t[k] += h;
            q.set_flat(&t).unwrap();
            let up = log_prob(&q, &s, &pi).unwrap();
            t[k] -= 2.0 * h;
            q.set_flat(&t).unwrap();
            let down = log_prob(&q, &s, &pi).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && elapsed < Duration::from_secs(30);
    report(
        7,
        "policy gradient vs central differences",
        pass,
        format!("max relative error {worst:.3e} over {checked} coordinates in 50 networks, {elapsed:.2?}"),
    );
    assert!(pass);
}

const DESK_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: Optimizer::Adam,
        seed,
        ..TrainConfig::default()
    }
}

fn desk_run(seed: u64) -> TrainingRun {
    run_training(&desk(), &desk_config(seed)).unwrap()
}

#[test]
fn criterion_08_desk_convergence() {
    let start = Instant::now();
    let runs: Vec<TrainingRun> = std::thread::scope(|scope| {
        let handles: Vec<_> = DESK_SEEDS
            .iter()
            .map(|&seed| scope.spawn(move || desk_run(seed)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let elapsed = start.elapsed();
    let ma = |run: &TrainingRun, iter: usize| run.log[iter - 1].ma100;
    let mut reached = 0;
    for (seed, run) in DESK_SEEDS.iter().zip(&runs) {
        let explore = run.log[..250].iter().map(|r| r.reward).sum::<f64>() / 250.0;
        println!(
            "  seed {seed}: exploration mean {explore:.4}, ma100 @300 {:.4} @500 {:.4} @1000 {:.4}",
            ma(run, 300),
            ma(run, 500),
            ma(run, 1000)
        );
        if ma(run, 1000) >= 0.95 {
            reached += 1;
        }
    }
    let mean_at = |iter: usize| runs.iter().map(|r| ma(r, iter)).sum::<f64>() / runs.len() as f64;
    let shape = mean_at(500) >= mean_at(300);
    let pass = reached >= 4 && shape && elapsed <= Duration::from_secs(600);
    report(
        8,
        "desk bandit convergence",
        pass,
        format!(
            "{reached} of 5 seeds reach ma100 >= 0.95 at iteration 1000; \
             seed-mean ma100 @300 {:.4} @500 {:.4}; {elapsed:.1?}",
            mean_at(300),
            mean_at(500)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_reward_arithmetic() {
    let z = DesiredDistribution::new(vec![0.37, 0.19, 0.27, 0.17]).unwrap();
    let x_hat = DVector::from_vec(vec![0.35, 0.20, 0.26, 0.19]);
    let r = reward_from_aggregate(&x_hat, 1.0, &z).unwrap();
    let pass = (r - 0.9776).abs() < 5e-5 && (r - 0.974).abs() <= 0.01;
    report(
        9,
        "reward arithmetic",
        pass,
        format!("R = {r:.6}, |R - 0.974| = {:.4}", (r - 0.974).abs()),
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let seed = DESK_SEEDS[0];
    let csv = |run: &TrainingRun| {
        let mut out = Vec::new();
        write_log_csv(&mut out, &run.log, 2).unwrap();
        out
    };
    let (a, b) = std::thread::scope(|scope| {
        let first = scope.spawn(|| csv(&desk_run(seed)));
        let second = scope.spawn(|| csv(&desk_run(seed)));
        (first.join().unwrap(), second.join().unwrap())
    });
    let pass = a == b && !a.is_empty();
    report(
        10,
        "determinism",
        pass,
        format!("two runs of seed {seed} produce {} and {} identical bytes: {}", a.len(), b.len(), a == b),
    );
    assert!(pass);
}
