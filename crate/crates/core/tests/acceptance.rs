//! End-to-end acceptance checks. Run with `--nocapture` to see the summary lines.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ewc::clustering::CentroidSet;
use ewc::harness::experiment::ewc_policy_round;
use ewc::harness::{run_experiment, ExperimentConfig, PolicyKind, RegretReport};
use ewc::hedge::{default_learning_rate, HedgeState, SelectionMode};
use ewc::offline::{fit_user_separator, SeparatorFitConfig};
use ewc::simulation::{generate_dataset, one_class_mix_population, six_cluster_population, PopulationSpec};
use ewc::{OptionIndex, Orientation, PreferenceParams, TravelContext, UserHistory};

struct Outcome {
    id: usize,
    passed: bool,
    detail: String,
}

fn within(limit_secs: u64, start: Instant) -> (bool, String) {
    let elapsed = start.elapsed();
    (
        elapsed <= Duration::from_secs(limit_secs),
        format!("{:.2}s (limit {limit_secs}s)", elapsed.as_secs_f64()),
    )
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn final_median(report: &RegretReport, policy: PolicyKind) -> f64 {
    let finals: Vec<f64> = report
        .curves
        .iter()
        .filter(|c| c.policy == policy)
        .map(|c| *c.cumulative_regret.last().unwrap())
        .collect();
    assert_eq!(finals.len(), report.metadata.seeds.len(), "missing curves for {policy}");
    median(&finals)
}

fn population_config(population: PopulationSpec, n_test: usize, n_train: usize, seeds: std::ops::Range<u64>) -> ExperimentConfig {
    ExperimentConfig {
        population: Some(population),
        n_test,
        n_train,
        t_test: 40,
        t_train: 40,
        k: 6,
        seeds: seeds.collect(),
        ..Default::default()
    }
}

/// Hedge with the default rate never exceeds `2 sqrt(T ln K)` against the best expert.
fn hedge_bound() -> Outcome {
    let start = Instant::now();
    let (k, t) = (6usize, 40usize);
    let bound = 2.0 * (t as f64 * (k as f64).ln()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for _ in 0..100 {
        let losses: Vec<Vec<f64>> = (0..t).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect();
        let mut h = HedgeState::init_uniform(k, default_learning_rate(k, t)).unwrap();
        let mut expected = 0.0;
        for l in &losses {
            expected += h.probs().iter().zip(l).map(|(p, x)| p * x).sum::<f64>();
            h.update(l).unwrap();
        }
        let best = (0..k)
            .map(|j| losses.iter().map(|l| l[j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let regret = expected - best;
        worst = worst.max(regret);
        ok &= regret <= bound;
    }
    let (fast, time) = within(1, start);
    Outcome {
        id: 1,
        passed: ok && fast,
        detail: format!("worst regret {worst:.3} vs bound {bound:.3} over 100 trials, {time}"),
    }
}

/// Ordering of median final regrets on well-separated clusters, plus the regret
/// reduction against LinUCB on the same run.
fn ordering_and_reduction() -> (Outcome, Outcome) {
    let std = 0.05;
    let population = six_cluster_population(std, 0.0);
    let means: Vec<[f64; 3]> = population.components.iter().map(|c| c.mean).collect();
    let mut min_gap = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            min_gap = min_gap.min(d);
        }
    }
    let separated = min_gap >= 10.0 * std;

    let start = Instant::now();
    let cfg = ExperimentConfig {
        policies: vec![
            PolicyKind::Ewc,
            PolicyKind::LinUcb,
            PolicyKind::Ftl,
            PolicyKind::OracleFtl,
            PolicyKind::OracleCluster,
            PolicyKind::OracleTheta,
        ],
        ..population_config(population, 200, 300, 0..10)
    };
    let report = run_experiment(&cfg).unwrap();
    let (fast, time) = within(30, start);

    let m = |p| final_median(&report, p);
    let (theta, cluster, ewc, linucb, ftl) = (
        m(PolicyKind::OracleTheta),
        m(PolicyKind::OracleCluster),
        m(PolicyKind::Ewc),
        m(PolicyKind::LinUcb),
        m(PolicyKind::Ftl),
    );
    let mut ftl_dominates = true;
    for seed in &cfg.seeds {
        let per_user = |p: PolicyKind| {
            &report
                .curves
                .iter()
                .find(|c| c.policy == p && c.seed == *seed)
                .unwrap()
                .per_user_loss
        };
        ftl_dominates &= per_user(PolicyKind::Ftl)
            .iter()
            .zip(per_user(PolicyKind::OracleFtl))
            .all(|(f, o)| f >= o);
    }
    let ordered = theta <= cluster && cluster <= ewc && ewc < linucb.min(ftl);
    let ordering = Outcome {
        id: 2,
        passed: separated && ordered && ftl_dominates && fast,
        detail: format!(
            "oracle-theta {theta} <= oracle-cluster {cluster} <= ewc {ewc} < min(linucb {linucb}, ftl {ftl}); \
             ftl >= oracle-ftl per user: {ftl_dominates}; min mean gap {min_gap:.3} vs 10*std {:.3}; {time}",
            10.0 * std
        ),
    };
    let reduction = 100.0 * (1.0 - ewc / linucb);
    let reduction_outcome = Outcome {
        id: 3,
        passed: reduction >= 10.0,
        detail: format!("EWC median final regret {reduction:.2}% below LinUCB (required >= 10%; published figure 27.57%)"),
    };
    (ordering, reduction_outcome)
}

/// Loss-guided clustering does no worse than L2 clustering with many one-class users.
fn loss_guided_vs_l2() -> Outcome {
    let start = Instant::now();
    let population = one_class_mix_population(0.05, 0.3, 0.0);
    let cfg = ExperimentConfig {
        policies: vec![PolicyKind::Ewc, PolicyKind::EwcL2],
        ..population_config(population.clone(), 200, 300, 0..10)
    };
    let report = run_experiment(&cfg).unwrap();
    let (fast, time) = within(60, start);

    let mut one_class = 0usize;
    let mut total = 0usize;
    for &seed in &cfg.seeds {
        let d = generate_dataset(&population, cfg.n_test, cfg.n_train, 40, 40, seed).unwrap();
        one_class += d.users.iter().filter(|u| u.history.is_one_class()).count();
        total += d.users.len();
    }
    let share = one_class as f64 / total as f64;
    let lg = final_median(&report, PolicyKind::Ewc);
    let l2 = final_median(&report, PolicyKind::EwcL2);
    Outcome {
        id: 4,
        passed: share >= 0.2 && lg <= l2 && fast,
        detail: format!(
            "loss-guided {lg} <= L2 {l2}; one-class users {:.1}%; {time}",
            100.0 * share
        ),
    }
}

/// Expected-loss EWC regret stays under `2N sqrt(T ln K) + T N l_hat` in at least 90% of seeds.
fn theorem_bound() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        policies: vec![PolicyKind::Ewc, PolicyKind::OracleTheta],
        ..population_config(six_cluster_population(0.05, 0.0), 100, 300, 0..20)
    };
    let report = run_experiment(&cfg).unwrap();
    let (fast, time) = within(30, start);
    let mut holds = 0;
    for b in &report.bounds {
        let (n, t, k) = (b.n_users as f64, b.rounds as f64, b.k as f64);
        assert_eq!((b.n_users, b.rounds, b.k), (100, 40, 6));
        let bound = 2.0 * n * (t * k.ln()).sqrt() + t * n * b.l_hat_centroids;
        assert!((bound - b.theoretical_bound).abs() < 1e-9);
        if b.ewc_expected_regret <= bound {
            holds += 1;
        }
    }
    Outcome {
        id: 5,
        passed: holds * 10 >= report.bounds.len() * 9 && fast,
        detail: format!("bound held in {holds}/{} seeds; {time}", report.bounds.len()),
    }
}

/// Hedge trajectories against a direct softmax of cumulative brute-force losses.
fn brute_force_hedge() -> Outcome {
    let experts = [
        PreferenceParams::new(0.25, 1.0, Orientation::Positive).unwrap(),
        PreferenceParams::new(1.25, 0.0, Orientation::Negative).unwrap(),
    ];
    let centroids = CentroidSet::new(experts.to_vec()).unwrap();
    let users: [[(f64, f64, u8); 4]; 3] = [
        [(1.2, 0.9, 2), (1.4, 0.6, 1), (1.0, 0.5, 2), (1.3, 0.8, 1)],
        [(1.1, 0.7, 1), (1.1, 0.7, 1), (1.45, 0.95, 2), (1.05, 0.55, 2)],
        [(1.3, 0.5, 2), (1.2, 1.0, 1), (1.35, 0.65, 1), (1.0, 0.9, 1)],
    ];
    let eta = 0.8;
    // prediction by hand: option 2 iff o * (tau - s e - b) > 0
    let hand_predict = |(b, s, o): (f64, f64, f64), tau: f64, e: f64| -> u8 {
        if o * (tau - s * e - b) > 0.0 {
            2
        } else {
            1
        }
    };
    let raw = [(0.25, 1.0, 1.0), (1.25, 0.0, -1.0)];
    let mut worst: f64 = 0.0;
    for (u, rounds) in users.iter().enumerate() {
        let mut state = HedgeState::init_uniform(2, eta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(u as u64);
        let mut cumulative = [0.0f64; 2];
        for &(tau, e, y) in rounds {
            let ctx = TravelContext::new(tau, e).unwrap();
            let actual = if y == 1 { OptionIndex::Standard } else { OptionIndex::Eco };
            let before = state.probs().to_vec();
            let round = ewc_policy_round(&mut state, &centroids, &ctx, actual, SelectionMode::Sample, &mut rng).unwrap();

            let losses: Vec<f64> = raw.iter().map(|&p| if hand_predict(p, tau, e) == y { 0.0 } else { 1.0 }).collect();
            let expected: f64 = before.iter().zip(&losses).map(|(p, l)| p * l).sum();
            worst = worst.max((expected - round.expected_loss).abs());
            for (c, l) in cumulative.iter_mut().zip(&losses) {
                *c += l;
            }
            let z: f64 = cumulative.iter().map(|c| (-eta * c).exp()).sum();
            for (p, c) in state.probs().iter().zip(&cumulative) {
                worst = worst.max((p - (-eta * c).exp() / z).abs());
            }
        }
    }
    Outcome {
        id: 6,
        passed: worst <= 1e-12,
        detail: format!("max deviation {worst:.2e} over 3 users x 4 rounds, K=2"),
    }
}

/// Every noise-free training label is reproduced by the fitted separator.
fn offline_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut perfect = 0;
    for user in 0..100u64 {
        // boundary through a random point of the context box
        let (tau0, e0) = (rng.random_range(1.05..1.45), rng.random_range(0.55..0.95));
        let slope = rng.random_range(-1.5..1.5);
        let o = if rng.random::<bool>() { Orientation::Positive } else { Orientation::Negative };
        let truth = PreferenceParams::new(tau0 - slope * e0, slope, o).unwrap();
        let mut contexts = Vec::new();
        while contexts.len() < 40 {
            let c = TravelContext::new(rng.random_range(1.0..1.5), rng.random_range(0.5..1.0)).unwrap();
            if truth.margin(&c).abs() >= 0.05 {
                contexts.push(c);
            }
        }
        let choices = contexts
            .iter()
            .map(|c| if truth.margin(c) > 0.0 { OptionIndex::Eco } else { OptionIndex::Standard })
            .collect();
        let history = UserHistory::new(contexts, choices).unwrap();
        let cfg = SeparatorFitConfig {
            seed: user,
            ..Default::default()
        };
        let fit = fit_user_separator(&history, &cfg).unwrap();
        if history.rounds().all(|(c, y)| ewc::predict_choice(&fit.params, c) == y) {
            perfect += 1;
        }
    }
    let (fast, time) = within(10, start);
    Outcome {
        id: 7,
        passed: perfect == 100 && fast,
        detail: format!("{perfect}/100 users reproduced exactly; {time}"),
    }
}

/// Two CLI runs with the same config and seeds write identical `regret.csv`.
fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"n_test": 60, "n_train": 90, "t_test": 30, "t_train": 30,
            "policies": ["ewc", "ewc-l2", "linucb", "ftl", "oracle-ftl", "oracle-cluster", "oracle-theta"]}"#,
    )
    .unwrap();
    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_ewc"))
            .arg("run")
            .arg("--config")
            .arg(&config)
            .args(["--seed", "3,4-5", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out.join("regret.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    Outcome {
        id: 8,
        passed: !a.is_empty() && a == b,
        detail: format!("two runs wrote {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    }
}

#[test]
fn acceptance_suite() {
    let (ordering, reduction) = ordering_and_reduction();
    let mut outcomes = vec![
        hedge_bound(),
        ordering,
        reduction,
        loss_guided_vs_l2(),
        theorem_bound(),
        brute_force_hedge(),
        offline_round_trip(),
        cli_determinism(),
    ];
    outcomes.sort_by_key(|o| o.id);
    for o in &outcomes {
        println!(
            "criterion {}: {} - {}",
            o.id,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
