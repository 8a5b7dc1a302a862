//! Holdout sweep over the number of clusters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EwcError, Result};
use crate::harness::config::{ExperimentConfig, PolicyKind};
use crate::harness::experiment::{dataset_for_seed, run_seed};
use crate::harness::report::median;
use crate::simulation::{load_dataset, Split, SyntheticDataset};

/// Fraction of training users held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub seed: u64,
    pub realized_regret: f64,
    pub expected_regret: f64,
    pub l_hat_centroids: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// K with the lowest median realized holdout regret; ties go to the smaller K.
    pub best_k: usize,
}

/// Keeps only the training users, relabelling the last fraction as holdout.
pub fn holdout_split(dataset: &SyntheticDataset) -> Result<SyntheticDataset> {
    let train: Vec<_> = dataset.train().cloned().collect();
    let n_val = ((train.len() as f64) * VALIDATION_FRACTION).round() as usize;
    if n_val == 0 || n_val >= train.len() {
        return Err(EwcError::Data(format!(
            "{} training users are too few for a holdout split",
            train.len()
        )));
    }
    let cut = train.len() - n_val;
    let users = train
        .into_iter()
        .enumerate()
        .map(|(i, mut u)| {
            if i >= cut {
                u.split = Split::Test;
            }
            u
        })
        .collect();
    Ok(SyntheticDataset { users })
}

/// Evaluates EWC on a holdout of the training users for every K in `ks`.
pub fn sweep_k(config: &ExperimentConfig, ks: &[usize]) -> Result<SweepResult> {
    config.validate()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(EwcError::Config("K values must be positive".into()));
    }
    let population = config.resolve_population()?;
    let loaded = match &config.dataset {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let holdouts = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let d = dataset_for_seed(config, population.as_ref(), loaded.as_ref(), seed)?;
            Ok((seed, holdout_split(&d)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, &(u64, SyntheticDataset))> =
        ks.iter().flat_map(|&k| holdouts.iter().map(move |h| (k, h))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, (seed, data))| {
            let cfg = ExperimentConfig {
                k,
                policies: vec![PolicyKind::Ewc],
                ..config.clone()
            };
            let outcome = run_seed(&cfg, *seed, data, population.as_ref())?;
            Ok(SweepRow {
                k,
                seed: *seed,
                realized_regret: outcome.bounds.ewc_realized_regret,
                expected_regret: outcome.bounds.ewc_expected_regret,
                l_hat_centroids: outcome.bounds.l_hat_centroids,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(usize, f64)> = None;
    for &k in ks {
        let m = median(&rows.iter().filter(|r| r.k == k).map(|r| r.realized_regret).collect::<Vec<_>>());
        if best.is_none_or(|(bk, bm)| m < bm || (m == bm && k < bk)) {
            best = Some((k, m));
        }
    }
    Ok(SweepResult {
        rows,
        best_k: best.map(|b| b.0).unwrap_or(ks[0]),
    })
}
