//! Offline training and the online evaluation loop shared by all policies.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    default_linucb_alpha, hindsight_majority, oracle_cluster_recommend, oracle_ftl_mistakes,
    oracle_theta_recommend, FtlState, LinUcbState,
};
use crate::choice::{
    choice_loss, expert_loss_vector, predict_choice, OptionIndex, Orientation, PreferenceParams,
    TravelContext,
};
use crate::clustering::{
    kmeans_l2_weighted, kmeans_loss_guided_weighted, CentroidSet, ClusteringResult, KMeansConfig,
};
use crate::error::{EwcError, Result};
use crate::harness::bounds::{theoretical_bound, BoundRecord};
use crate::harness::config::{ExperimentConfig, PolicyKind};
use crate::harness::report::{PolicyCurve, ReportMetadata, RegretReport};
use crate::hedge::{default_learning_rate, HedgeState, SelectionMode};
use crate::offline::{fit_all_users, SeparatorFit, SeparatorFitConfig};
use crate::seeding::{derive_seed, stream_rng, Stream};
use crate::simulation::{
    empirical_centroid_loss, generate_dataset, load_dataset, PopulationSpec, SyntheticDataset,
    SyntheticUser,
};

/// Output of the offline phase for one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineModel {
    pub fits: Vec<SeparatorFit>,
    pub loss_guided: ClusteringResult,
    pub l2: Option<ClusteringResult>,
}

impl OfflineModel {
    pub fn degenerate_users(&self) -> usize {
        self.fits.iter().filter(|f| f.degenerate).count()
    }
}

/// Fits every training user and clusters the fitted parameters.
pub fn train_offline(
    train: &[&SyntheticUser],
    config: &ExperimentConfig,
    seed: u64,
    with_l2: bool,
) -> Result<OfflineModel> {
    let histories: Vec<_> = train.iter().map(|u| u.history.clone()).collect();
    if histories.is_empty() {
        return Err(EwcError::Data("dataset has no training users".into()));
    }
    let separator = SeparatorFitConfig {
        seed: derive_seed(seed, Stream::Separator, config.separator.seed),
        ..config.separator
    };
    let fits = fit_all_users(&histories, &separator)?;
    let params: Vec<PreferenceParams> = fits.iter().map(|f| f.params).collect();
    let weights: Vec<f64> = fits
        .iter()
        .map(|f| if f.degenerate { config.degenerate_weight } else { 1.0 })
        .collect();
    let kmeans = KMeansConfig {
        k: config.k,
        seed: derive_seed(seed, Stream::Clustering, 0),
        max_iters: config.max_iters,
    };
    let loss_guided = kmeans_loss_guided_weighted(&params, &histories, Some(&weights), &kmeans)?;
    let l2 = if with_l2 {
        Some(kmeans_l2_weighted(&params, Some(&weights), &kmeans)?)
    } else {
        None
    };
    Ok(OfflineModel {
        fits,
        loss_guided,
        l2,
    })
}

/// What happened in one EWC round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwcRound {
    pub expert: usize,
    pub recommendation: OptionIndex,
    /// Loss of the recommendation actually made.
    pub realized_loss: f64,
    /// `<p, l>` under the pre-update distribution.
    pub expected_loss: f64,
}

/// Selects an expert, recommends, observes the choice and applies the Hedge update.
pub fn ewc_policy_round<R: Rng + ?Sized>(
    state: &mut HedgeState,
    centroids: &CentroidSet,
    ctx: &TravelContext,
    actual: OptionIndex,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<EwcRound> {
    if state.num_experts() != centroids.len() {
        return Err(EwcError::InvalidInput(format!(
            "Hedge tracks {} experts but there are {} centroids",
            state.num_experts(),
            centroids.len()
        )));
    }
    let expert = state.choose(mode, rng);
    let recommendation = predict_choice(&centroids.as_slice()[expert], ctx);
    let losses: Vec<f64> = expert_loss_vector(centroids.as_slice(), ctx, actual)
        .into_iter()
        .map(|l| l.as_f64())
        .collect();
    let expected_loss = state.expected_loss(&losses);
    state.update(&losses)?;
    Ok(EwcRound {
        expert,
        recommendation,
        realized_loss: choice_loss(recommendation, actual).as_f64(),
        expected_loss,
    })
}

/// Shared inputs of the online phase for one seed.
struct OnlineSetup<'a> {
    seed: u64,
    eta: f64,
    selection: SelectionMode,
    alpha: f64,
    loss_guided: &'a CentroidSet,
    l2: Option<&'a CentroidSet>,
    cluster_means: &'a [PreferenceParams],
}

struct UserTrace {
    losses: Vec<f64>,
    expected: Option<Vec<f64>>,
    digest: [u8; 32],
}

fn hash_round(hasher: &mut Sha256, user: u64, round: usize, ctx: &TravelContext, choice: OptionIndex) {
    hasher.update(user.to_le_bytes());
    hasher.update((round as u64).to_le_bytes());
    hasher.update(ctx.tau.to_bits().to_le_bytes());
    hasher.update(ctx.e.to_bits().to_le_bytes());
    hasher.update([choice.as_u8()]);
}

fn run_ewc_user(user: &SyntheticUser, centroids: &CentroidSet, setup: &OnlineSetup<'_>) -> Result<UserTrace> {
    let mut state = HedgeState::init_uniform(centroids.len(), setup.eta)?;
    let mut rng = stream_rng(setup.seed, Stream::Hedge, user.user_id);
    let mut hasher = Sha256::new();
    let mut losses = Vec::with_capacity(user.history.len());
    let mut expected = Vec::with_capacity(user.history.len());
    for (t, (ctx, actual)) in user.history.rounds().enumerate() {
        hash_round(&mut hasher, user.user_id, t, ctx, actual);
        let round = ewc_policy_round(&mut state, centroids, ctx, actual, setup.selection, &mut rng)?;
        losses.push(round.realized_loss);
        expected.push(round.expected_loss);
    }
    Ok(UserTrace {
        losses,
        expected: Some(expected),
        digest: hasher.finalize().into(),
    })
}

fn run_user(policy: PolicyKind, user: &SyntheticUser, setup: &OnlineSetup<'_>) -> Result<UserTrace> {
    match policy {
        PolicyKind::Ewc => return run_ewc_user(user, setup.loss_guided, setup),
        PolicyKind::EwcL2 => {
            let centroids = setup
                .l2
                .ok_or_else(|| EwcError::InvalidInput("L2 centroids were not trained".into()))?;
            return run_ewc_user(user, centroids, setup);
        }
        _ => {}
    }

    let mut hasher = Sha256::new();
    let mut losses = Vec::with_capacity(user.history.len());
    let mut ftl = FtlState::default();
    let mut linucb = LinUcbState::new(setup.alpha)?;
    let hindsight = hindsight_majority(&user.history);
    let cluster_mean = setup.cluster_means.get(user.cluster_id).ok_or_else(|| {
        EwcError::Data(format!(
            "user {} has cluster id {} without a known mean",
            user.user_id, user.cluster_id
        ))
    })?;
    for (t, (ctx, actual)) in user.history.rounds().enumerate() {
        hash_round(&mut hasher, user.user_id, t, ctx, actual);
        let recommendation = match policy {
            PolicyKind::LinUcb => linucb.step(ctx, actual),
            PolicyKind::Ftl => {
                let r = ftl.recommend();
                ftl.observe(actual);
                r
            }
            PolicyKind::OracleFtl => hindsight,
            PolicyKind::OracleCluster => oracle_cluster_recommend(cluster_mean, ctx),
            PolicyKind::OracleTheta => oracle_theta_recommend(&user.theta_true, ctx),
            PolicyKind::Ewc | PolicyKind::EwcL2 => unreachable!("handled above"),
        };
        losses.push(choice_loss(recommendation, actual).as_f64());
    }
    Ok(UserTrace {
        losses,
        expected: None,
        digest: hasher.finalize().into(),
    })
}

/// Per-user traces, in test-user order.
fn run_policy(policy: PolicyKind, test: &[&SyntheticUser], setup: &OnlineSetup<'_>) -> Result<Vec<UserTrace>> {
    test.par_iter().map(|u| run_user(policy, u, setup)).collect()
}

fn cumulative_by_round(rows: impl Iterator<Item = Vec<f64>>, rounds: usize) -> Vec<f64> {
    let mut per_round = vec![0.0; rounds];
    for row in rows {
        for (acc, v) in per_round.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut total = 0.0;
    per_round
        .into_iter()
        .map(|v| {
            total += v;
            total
        })
        .collect()
}

fn combined_digest(traces: &[UserTrace]) -> String {
    let mut hasher = Sha256::new();
    for t in traces {
        hasher.update(t.digest);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Generator means per cluster id: from the population when it covers every
/// id in the dataset, otherwise the empirical mean of each cluster's true
/// parameters.
pub fn cluster_means(dataset: &SyntheticDataset, population: Option<&PopulationSpec>) -> Vec<PreferenceParams> {
    let max_id = dataset.users.iter().map(|u| u.cluster_id).max().unwrap_or(0);
    if let Some(p) = population {
        if max_id < p.components.len() {
            return p.components.iter().map(|c| c.mean_params()).collect();
        }
    }
    let mut sums: BTreeMap<usize, ([f64; 3], f64)> = BTreeMap::new();
    for u in &dataset.users {
        let e = sums.entry(u.cluster_id).or_insert(([0.0; 3], 0.0));
        for (acc, v) in e.0.iter_mut().zip(u.theta_true.to_vector()) {
            *acc += v;
        }
        e.1 += 1.0;
    }
    (0..=max_id)
        .map(|k| match sums.get(&k) {
            Some((s, n)) => PreferenceParams {
                bias: s[0] / n,
                slope: s[1] / n,
                orientation: Orientation::from_sign(s[2]),
            },
            None => PreferenceParams {
                bias: 0.0,
                slope: 0.0,
                orientation: Orientation::Positive,
            },
        })
        .collect()
}

/// Curves and bound record for one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub curves: Vec<PolicyCurve>,
    pub bounds: BoundRecord,
    pub model: OfflineModel,
}

/// Runs the offline and online phases for a single seed on the given dataset.
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &SyntheticDataset,
    population: Option<&PopulationSpec>,
) -> Result<SeedOutcome> {
    let train: Vec<&SyntheticUser> = dataset.train().collect();
    let test: Vec<&SyntheticUser> = dataset.test().collect();
    if test.is_empty() {
        return Err(EwcError::Data("dataset has no test users".into()));
    }
    let needs_l2 = config.policies.contains(&PolicyKind::EwcL2);
    let model = train_offline(&train, config, seed, needs_l2)?;

    let rounds = test.iter().map(|u| u.history.len()).max().unwrap_or(0);
    let eta = config
        .eta
        .unwrap_or_else(|| default_learning_rate(config.k, rounds));
    let alpha = match config.linucb_alpha {
        Some(a) => a,
        None => default_linucb_alpha(rounds, 2, config.linucb_delta)?,
    };
    let means = cluster_means(dataset, population);
    let setup = OnlineSetup {
        seed,
        eta,
        selection: config.selection,
        alpha,
        loss_guided: &model.loss_guided.centroids,
        l2: model.l2.as_ref().map(|r| &r.centroids),
        cluster_means: &means,
    };

    let oracle = run_policy(PolicyKind::OracleTheta, &test, &setup)?;
    let oracle_cumulative = cumulative_by_round(oracle.iter().map(|t| t.losses.clone()), rounds);
    let oracle_total: f64 = oracle.iter().flat_map(|t| t.losses.iter()).sum();

    let mut curves = Vec::with_capacity(config.policies.len());
    let mut ewc_traces = None;
    for &policy in &config.policies {
        let traces = run_policy(policy, &test, &setup)?;
        let cumulative_loss = cumulative_by_round(traces.iter().map(|t| t.losses.clone()), rounds);
        let cumulative_regret = cumulative_loss
            .iter()
            .zip(&oracle_cumulative)
            .map(|(a, b)| a - b)
            .collect();
        let expected_cumulative_loss = traces[0].expected.as_ref().map(|_| {
            cumulative_by_round(traces.iter().map(|t| t.expected.clone().unwrap_or_default()), rounds)
        });
        curves.push(PolicyCurve {
            policy,
            seed,
            cumulative_loss,
            cumulative_regret,
            expected_cumulative_loss,
            per_user_loss: traces.iter().map(|t| t.losses.iter().sum()).collect(),
            stream_digest: combined_digest(&traces),
        });
        if policy == PolicyKind::Ewc {
            ewc_traces = Some(traces);
        }
    }
    let ewc_traces = match ewc_traces {
        Some(t) => t,
        None => run_policy(PolicyKind::Ewc, &test, &setup)?,
    };

    let n = test.len();
    let k = model.loss_guided.centroids.len();
    let l_hat = empirical_centroid_loss(dataset, &model.loss_guided.centroids);
    let bound = theoretical_bound(n, rounds, k, l_hat)?;
    let ewc_expected: f64 = ewc_traces
        .iter()
        .flat_map(|t| t.expected.iter().flatten())
        .sum();
    let ewc_realized: f64 = ewc_traces.iter().flat_map(|t| t.losses.iter()).sum();
    let mean_min_share = test
        .iter()
        .map(|u| oracle_ftl_mistakes(&u.history) / u.history.len() as f64)
        .sum::<f64>()
        / n as f64;
    let oracle_ftl_regret: f64 =
        test.iter().map(|u| oracle_ftl_mistakes(&u.history)).sum::<f64>() - oracle_total;
    let ftl_condition_rhs = mean_min_share - 2.0 * ((k as f64).ln() / rounds as f64).sqrt();
    let bounds = BoundRecord {
        seed,
        n_users: n,
        rounds,
        k,
        eta,
        l_hat_centroids: l_hat,
        hedge_term: bound.hedge_term,
        centroid_term: bound.centroid_term,
        theoretical_bound: bound.total,
        ewc_expected_regret: ewc_expected - oracle_total,
        ewc_realized_regret: ewc_realized - oracle_total,
        bound_holds: ewc_expected - oracle_total <= bound.total,
        mean_min_share,
        oracle_ftl_regret,
        ftl_condition_rhs,
        ftl_condition_holds: l_hat < ftl_condition_rhs,
        degenerate_users: model.degenerate_users(),
        clustering_converged: model.loss_guided.converged,
    };
    Ok(SeedOutcome {
        curves,
        bounds,
        model,
    })
}

/// Produces the dataset a seed runs on: the configured file, or a fresh draw.
pub fn dataset_for_seed(
    config: &ExperimentConfig,
    population: Option<&PopulationSpec>,
    loaded: Option<&SyntheticDataset>,
    seed: u64,
) -> Result<SyntheticDataset> {
    if let Some(d) = loaded {
        return Ok(d.clone());
    }
    let spec = population.ok_or_else(|| EwcError::Config("no dataset or population given".into()))?;
    generate_dataset(spec, config.n_test, config.n_train, config.t_test, config.t_train, seed)
}

/// Runs every configured seed and collects the results into one report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RegretReport> {
    run_experiment_detailed(config).map(|(report, _)| report)
}

/// Like [`run_experiment`], also returning each seed's offline model.
pub fn run_experiment_detailed(config: &ExperimentConfig) -> Result<(RegretReport, Vec<OfflineModel>)> {
    config.validate()?;
    let population = config.resolve_population()?;
    let loaded = match &config.dataset {
        Some(path) => Some(load_dataset(path)?),
        None => None,
    };
    let outcomes = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let dataset = dataset_for_seed(config, population.as_ref(), loaded.as_ref(), seed)?;
            run_seed(config, seed, &dataset, population.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::new();
    let mut bounds = Vec::new();
    let mut models = Vec::new();
    for o in outcomes {
        curves.extend(o.curves);
        bounds.push(o.bounds);
        models.push(o.model);
    }
    // policy-major order, seeds in configured order
    let order = |p: PolicyKind| config.policies.iter().position(|&q| q == p).unwrap_or(usize::MAX);
    let seed_pos = |s: u64| config.seeds.iter().position(|&q| q == s).unwrap_or(usize::MAX);
    curves.sort_by_key(|c| (order(c.policy), seed_pos(c.seed)));

    let report = RegretReport {
        curves,
        bounds,
        metadata: ReportMetadata {
            seeds: config.seeds.clone(),
            policies: config.policies.clone(),
            config_hash: config.fingerprint(),
        },
    };
    Ok((report, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::TravelContext;
    use crate::seeding::StreamRng;
    use crate::simulation::six_cluster_population;
    use rand::SeedableRng;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n_test: 30,
            n_train: 60,
            t_test: 20,
            t_train: 20,
            seeds: vec![1, 2],
            policies: PolicyKind::ALL.to_vec(),
            separator: SeparatorFitConfig {
                iterations: 2000,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn single_expert_round() {
        let centroid = PreferenceParams::new(0.25, 1.0, Orientation::Positive).unwrap();
        let centroids = CentroidSet::new(vec![centroid]).unwrap();
        let mut state = HedgeState::init_uniform(1, 0.5).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        let c = TravelContext::new(1.4, 0.6).unwrap();
        for actual in [OptionIndex::Eco, OptionIndex::Standard] {
            let r = ewc_policy_round(&mut state, &centroids, &c, actual, SelectionMode::Sample, &mut rng).unwrap();
            assert_eq!(r.recommendation, predict_choice(&centroid, &c));
            assert_eq!(state.probs(), &[1.0]);
        }
    }

    #[test]
    fn all_zero_losses_leave_weights() {
        let always_standard = PreferenceParams::new(10.0, 0.0, Orientation::Positive).unwrap();
        let centroids = CentroidSet::new(vec![always_standard; 3]).unwrap();
        let mut state = HedgeState::init_uniform(3, 1.0).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        let c = TravelContext::new(1.2, 0.9).unwrap();
        let r = ewc_policy_round(&mut state, &centroids, &c, OptionIndex::Standard, SelectionMode::Sample, &mut rng)
            .unwrap();
        assert_eq!(r.realized_loss, 0.0);
        assert_eq!(r.expected_loss, 0.0);
        assert!(state.probs().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn two_expert_round_matches_hedge_update() {
        let eco = PreferenceParams::new(0.0, 1.0, Orientation::Positive).unwrap();
        let standard = PreferenceParams::new(0.0, 1.0, Orientation::Negative).unwrap();
        let centroids = CentroidSet::new(vec![eco, standard]).unwrap();
        let mut state = HedgeState::init_uniform(2, 1.0).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        let c = TravelContext::new(1.2, 0.9).unwrap();
        let r = ewc_policy_round(&mut state, &centroids, &c, OptionIndex::Eco, SelectionMode::Sample, &mut rng).unwrap();
        assert_eq!(r.expected_loss, 0.5);
        assert!((state.probs()[0] - 0.7311).abs() < 1e-4);
        assert!((state.probs()[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn experiment_invariants() {
        let cfg = small_config();
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.curves.len(), PolicyKind::ALL.len() * 2);
        let oracle: Vec<_> = report
            .curves
            .iter()
            .filter(|c| c.policy == PolicyKind::OracleTheta)
            .collect();
        for c in &report.curves {
            assert_eq!(c.cumulative_loss.len(), 20);
            assert!(c.cumulative_loss.windows(2).all(|w| w[0] <= w[1]));
            let o = oracle.iter().find(|o| o.seed == c.seed).unwrap();
            for ((l, r), ol) in c.cumulative_loss.iter().zip(&c.cumulative_regret).zip(&o.cumulative_loss) {
                assert_eq!(*r, l - ol);
            }
            // every policy consumed the same stream
            assert_eq!(c.stream_digest, o.stream_digest);
        }
        // noise-free data: the oracle never errs
        assert!(oracle.iter().all(|o| o.cumulative_loss.iter().all(|&v| v == 0.0)));
        for b in &report.bounds {
            assert!(b.bound_holds);
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = small_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_clusters_is_reported() {
        let cfg = ExperimentConfig {
            n_train: 3,
            k: 5,
            seeds: vec![0],
            ..small_config()
        };
        assert!(matches!(run_experiment(&cfg), Err(EwcError::TooManyClusters { .. })));
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let cfg = ExperimentConfig {
            dataset: Some("/nonexistent/data.csv".into()),
            ..small_config()
        };
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.category(), crate::error::ErrorCategory::Data);
    }

    #[test]
    fn empirical_cluster_means_without_population() {
        let spec = six_cluster_population(0.0, 0.0);
        let d = generate_dataset(&spec, 40, 40, 5, 5, 0).unwrap();
        let means = cluster_means(&d, None);
        for (k, m) in means.iter().enumerate() {
            if d.users.iter().any(|u| u.cluster_id == k) {
                assert!((m.bias - spec.components[k].mean[0]).abs() < 1e-9);
                assert_eq!(m.orientation, spec.components[k].mean_params().orientation);
            }
        }
    }
}
