//! Acceptance gate: one test per criterion, each printing a pass line.

use std::collections::HashMap;
use std::process::Command;

use tasep::clocks::{ClockLaw, MergedClock, StreamSeed};
use tasep::coupling::{
    lemma_sequence, pullback_attractor, sync_time_all, sync_time_pair, ChainSystem, JumpSystem,
};
use tasep::experiments::{fit_power_law, run_sweep, CellResult, SweepPlan};
use tasep::lattice::{all_states, hop, hop_index, LatticeState, Model, RateConfig};
use tasep::master::{
    build_generator, coupling_bound_check, delta, mixing_time, propagate, tv_distance,
    uniform_distribution, z3_model,
};
use tasep::{derive_seed, lattice::SiteIndex};

fn uniform_chain(n: usize, alpha: f64, beta: f64) -> ChainSystem {
    ChainSystem::new(&RateConfig::uniform(n, alpha, beta, 1.0).unwrap()).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tasep"))
}

/// Criterion 1: the flushing jump sequence empties every state, n = 1..10.
#[test]
fn acceptance_01_flushing_sequence_oracle() {
    for n in 1..=10usize {
        let seq = lemma_sequence(n);
        assert_eq!(seq.len(), n * (n + 1) / 2);
        for u in 0..1usize << n {
            let end = seq.iter().fold(u, |s, &k| hop_index(s, n, k));
            assert_eq!(end, 0, "n={n}, start={u:0n$b}");
        }
    }
    println!("acceptance 01 flushing-sequence oracle: pass");
}

/// Criterion 2: the non-synchronizing periodic pair replays byte-for-byte.
#[test]
fn acceptance_02_counterexample_replay_bytes() {
    let out = bin().args(["replay", "--fixture", "remark54"]).output().unwrap();
    assert!(out.status.success());
    let expected = "\
t0 110 000
t1 101 000
t2 011 000
t3 111 100
t4 111 010
t5 111 001
t6 110 000
";
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
    println!("acceptance 02 counterexample replay: pass");
}

fn simulate_to(sys: &ChainSystem, start: usize, t: f64, seed: u64) -> usize {
    let mut clock = MergedClock::new(sys.law(), StreamSeed::new(seed));
    let mut s = start;
    while let Some(ev) = clock.next() {
        if ev.time >= t {
            break;
        }
        s = sys.apply(s, ev.site);
    }
    s
}

/// Criterion 3: the empirical time-t law of the event-driven simulator
/// matches the master equation in total variation.
#[test]
fn acceptance_03_simulator_master_bridge() {
    let runs = 100_000usize;
    for n in 2..=4usize {
        let sys = uniform_chain(n, 1.0, 1.0);
        let q = build_generator(&sys).unwrap();
        let dim = sys.num_states();
        let start = 2 % dim;
        for t in [1.0f64, 5.0] {
            let mut counts = vec![0.0f64; dim];
            for r in 0..runs {
                let seed = derive_seed(31, &[n as u64, t.to_bits(), r as u64]);
                counts[simulate_to(&sys, start, t, seed)] += 1.0;
            }
            for c in counts.iter_mut() {
                *c /= runs as f64;
            }
            let exact = propagate(&q, &delta(dim, start), t).unwrap();
            let tv = tv_distance(&counts, &exact).unwrap();
            let tol = 3.0 * ((dim as f64) / runs as f64).sqrt();
            assert!(tv <= tol, "n={n}, t={t}: tv={tv} > {tol}");
        }
    }
    println!("acceptance 03 simulator/master bridge: pass");
}

/// Criterion 4: TV distance between any two evolved laws is bounded by the
/// exact non-coalescence probability, both sides computed exactly.
#[test]
fn acceptance_04_coupling_bound_exact() {
    for n in 2..=4usize {
        let sys = uniform_chain(n, 1.0, 1.0);
        let dim = sys.num_states();
        for t in [1.0, 2.0, 5.0, 10.0, 20.0] {
            let (lhs, rhs, holds) =
                coupling_bound_check(&sys, t, &delta(dim, dim - 1), &delta(dim, 0)).unwrap();
            assert!(holds, "n={n}, t={t}: lhs={lhs} rhs={rhs}");
            assert!(lhs <= rhs + 1e-10);
        }
    }
    println!("acceptance 04 exact coupling bound: pass");
}

/// Criterion 5: the Markov-inequality mixing bound E[tau]/eps dominates the
/// exact mixing time.
#[test]
fn acceptance_05_markov_mixing_bound() {
    let runs = 10_000usize;
    let eps = 0.25;
    for n in 3..=6usize {
        let sys = uniform_chain(n, 1.0, 1.0);
        let q = build_generator(&sys).unwrap();
        let t_mix = mixing_time(&q, eps).unwrap();
        let law = sys.law();
        let empty = LatticeState::empty(n).unwrap();
        let full = LatticeState::full(n).unwrap();
        let taus: Vec<f64> = (0..runs)
            .map(|r| {
                let seed = derive_seed(47, &[n as u64, r as u64]);
                sync_time_pair(&empty, &full, law, StreamSeed::new(seed), 1e6)
                    .unwrap()
                    .tau
                    .unwrap()
            })
            .collect();
        let mean = taus.iter().sum::<f64>() / runs as f64;
        let var =
            taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (runs - 1) as f64;
        let stderr = (var / runs as f64).sqrt();
        let bound = mean / eps + 3.0 * stderr;
        assert!(t_mix <= bound, "n={n}: t_mix={t_mix} > {bound}");
    }
    println!("acceptance 05 Markov mixing bound: pass");
}

/// Criterion 6: sampled pullback attractors are singletons and invariant.
#[test]
fn acceptance_06_singleton_attractor() {
    let sys = uniform_chain(6, 1.0, 1.0);
    let mut singletons = 0;
    for s in 0..100u64 {
        let seed = StreamSeed::new(derive_seed(5, &[s]));
        let res = pullback_attractor(&sys, seed, 1e4).unwrap();
        if res.attractor.len() == 1 {
            singletons += 1;
        }
        assert!(tasep::coupling::invariance_check(&sys, seed, 5.0, 1e4).unwrap());
    }
    assert!(singletons >= 99, "{singletons}/100 singleton attractors");
    println!("acceptance 06 singleton attractor: pass ({singletons}/100)");
}

/// Criterion 7: the additive mod-3 model separates distributional mixing
/// from trajectory synchronization: laws converge, attractor stays full.
#[test]
fn acceptance_07_trivial_attractor_separation() {
    let (sys, q) = z3_model();
    for s in 0..100u64 {
        let seed = StreamSeed::new(derive_seed(13, &[s]));
        let res = pullback_attractor(&sys, seed, 1e3).unwrap();
        assert_eq!(res.attractor.len(), 3, "seed {s}");
    }
    let mu = propagate(&q, &delta(3, 0), 10.0).unwrap();
    let tv = tv_distance(&mu, &uniform_distribution(3)).unwrap();
    assert!(tv <= 1e-4, "tv={tv}");
    println!("acceptance 07 trivial attractor separation: pass");
}

/// Criterion 8: all-state coalescence equals empty/full coalescence per
/// seed, and the hop maps preserve the componentwise order.
#[test]
fn acceptance_08_sandwich_and_monotonicity() {
    for n in 1..=8usize {
        let rates = RateConfig::uniform(n, 1.0, 1.0, 1.0).unwrap();
        let law = ClockLaw::from_rates(&rates).unwrap();
        let empty = LatticeState::empty(n).unwrap();
        let full = LatticeState::full(n).unwrap();
        for s in 0..200u64 {
            let seed = StreamSeed::new(derive_seed(61, &[n as u64, s]));
            let pair = sync_time_pair(&empty, &full, &law, seed, 1e6).unwrap();
            let all = sync_time_all(&rates, seed, 1e6).unwrap();
            assert_eq!(pair.synced, all.synced);
            assert_eq!(pair.tau, all.tau, "n={n}, seed {s}");
        }
    }
    for n in 1..=6usize {
        let states = all_states(n).unwrap();
        let clocks: Vec<SiteIndex> = (0..=n as i32).map(SiteIndex).collect();
        for x in &states {
            for y in &states {
                if !x.le(y) {
                    continue;
                }
                for &k in &clocks {
                    let fx = hop(x, k, Model::Tasep).unwrap();
                    let fy = hop(y, k, Model::Tasep).unwrap();
                    assert!(fx.le(&fy), "n={n}, k={k:?}, x={x:?}, y={y:?}");
                }
            }
        }
    }
    println!("acceptance 08 sandwich + monotonicity: pass");
}

fn desk_gamma(alpha: f64, beta: f64, seed: u64) -> f64 {
    let plan = SweepPlan::desk(vec![(alpha, beta)], seed);
    let cells = run_sweep(&plan).unwrap();
    assert!(cells.iter().all(|c| c.timeouts == 0));
    let fit = fit_power_law(&cells, (16, 96)).unwrap();
    fit.gamma
}

/// Criterion 9: desk-scale power laws land in the published windows.
#[test]
fn acceptance_09_power_law_desk_scale() {
    let hd = desk_gamma(1.0, 0.1, 101);
    assert!((0.99..=1.15).contains(&hd), "HD gamma {hd}");
    let mc = desk_gamma(1.0, 1.0, 102);
    assert!((1.45..=1.70).contains(&mc), "MC gamma {mc}");
    let coex = desk_gamma(0.2, 0.2, 103);
    assert!((1.80..=2.05).contains(&coex), "coexistence gamma {coex}");
    println!(
        "acceptance 09 desk-scale power laws: pass (HD {hd:.3}, MC {mc:.3}, coexistence {coex:.3})"
    );
}

/// Criterion 10: the regression recovers exact and perturbed power laws.
#[test]
fn acceptance_10_fit_correctness() {
    let make = |bump: Option<usize>| -> Vec<CellResult> {
        [16usize, 24, 32, 48, 64, 96]
            .iter()
            .map(|&n| {
                let mut tau = 2.0 * (n as f64).powf(1.5);
                if bump == Some(n) {
                    tau *= 1.005;
                }
                CellResult {
                    alpha: 1.0,
                    beta: 1.0,
                    n,
                    mean_tau: tau,
                    batch_means: vec![tau; 4],
                    sigma: 0.0,
                    timeouts: 0,
                    runs: 100,
                }
            })
            .collect()
    };
    let exact = fit_power_law(&make(None), (16, 96)).unwrap();
    assert!((exact.gamma - 1.5).abs() < 1e-12);
    assert!((exact.c - 2.0).abs() < 1e-12);
    assert!(exact.delta < 1e-12);
    let perturbed = fit_power_law(&make(Some(48)), (16, 96)).unwrap();
    assert!((perturbed.gamma - 1.5).abs() <= 0.01, "gamma {}", perturbed.gamma);
    println!("acceptance 10 fit correctness: pass");
}

/// Criterion 11: sweeps are a pure function of the plan — identical across
/// repeated runs and worker counts, in-process and through the CLI.
#[test]
fn acceptance_11_determinism() {
    let plan = SweepPlan {
        points: vec![(1.0, 1.0)],
        lengths: vec![8, 12, 16],
        runs_per_cell: 64,
        batches: 8,
        model: Model::Tasep,
        base_seed: 7,
        max_time: 1e5,
        h: 1.0,
    };
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = pool1.install(|| run_sweep(&plan).unwrap());
    let b = pool4.install(|| run_sweep(&plan).unwrap());
    assert_eq!(a, b);

    let dir = std::env::temp_dir().join(format!("tasep-acc11-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let plan_path = dir.join("plan.txt");
    std::fs::write(
        &plan_path,
        "points = 1.0 1.0\nlengths = 8 12 16\nruns = 64\nbatches = 8\nseed = 7\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out_dir = dir.join(format!("out{workers}"));
        let status = bin()
            .args(["sweep", "--plan"])
            .arg(&plan_path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--workers", workers])
            .output()
            .unwrap();
        assert!(status.status.success());
        outputs.push(std::fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    std::fs::remove_dir_all(&dir).ok();
    println!("acceptance 11 determinism: pass");
}

/// Criterion 12: swapping alpha and beta leaves E[tau] invariant (3 sigma).
#[test]
fn acceptance_12_particle_hole_duality() {
    let sample = |alpha: f64, beta: f64, base: u64| -> (f64, f64) {
        let runs = 2000usize;
        let rates = RateConfig::uniform(32, alpha, beta, 1.0).unwrap();
        let law = ClockLaw::from_rates(&rates).unwrap();
        let empty = LatticeState::empty(32).unwrap();
        let full = LatticeState::full(32).unwrap();
        let taus: Vec<f64> = (0..runs)
            .map(|r| {
                let seed = derive_seed(base, &[r as u64]);
                sync_time_pair(&empty, &full, &law, StreamSeed::new(seed), 1e6)
                    .unwrap()
                    .tau
                    .unwrap()
            })
            .collect();
        let mean = taus.iter().sum::<f64>() / runs as f64;
        let var =
            taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (runs - 1) as f64;
        (mean, (var / runs as f64).sqrt())
    };
    let (m1, se1) = sample(1.0, 0.3, 211);
    let (m2, se2) = sample(0.3, 1.0, 212);
    let gap = (m1 - m2).abs();
    let tol = 3.0 * (se1 * se1 + se2 * se2).sqrt();
    assert!(gap <= tol, "means {m1} vs {m2}, gap {gap} > {tol}");
    println!("acceptance 12 particle-hole duality: pass");
}

/// CLI smoke check: sync output is well-formed CSV and every run syncs.
#[test]
fn acceptance_outputs_are_csv() {
    let out = bin()
        .args(["sync", "--n", "3", "--alpha", "1", "--beta", "1", "--runs", "5", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "run,seed,tau,synced,events");
    let mut seen: HashMap<usize, bool> = HashMap::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        seen.insert(fields[0].parse().unwrap(), fields[3].parse().unwrap());
    }
    assert_eq!(seen.len(), 5);
    assert!(seen.values().all(|&s| s));
}
