//! Regret bounds and the EWC/LinUCB crossover analysis.

use serde::{Deserialize, Serialize};

use crate::error::{EwcError, Result};
use crate::harness::config::PolicyKind;
use crate::harness::report::{median, median_curve, RegretReport};

/// Dimension of the LinUCB feature vectors.
pub const LINUCB_DIMENSION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `2 N sqrt(T ln K)`
    pub hedge_term: f64,
    /// `T N l_hat`
    pub centroid_term: f64,
    pub total: f64,
}

/// `2 N sqrt(T ln K) + T N l_hat`.
pub fn theoretical_bound(n: usize, t: usize, k: usize, l_hat: f64) -> Result<BoundTerms> {
    if n == 0 || t == 0 || k == 0 {
        return Err(EwcError::InvalidInput(format!(
            "bound needs N, T, K >= 1 (got N={n}, T={t}, K={k})"
        )));
    }
    if !(l_hat.is_finite() && l_hat >= 0.0) {
        return Err(EwcError::InvalidInput(format!("centroid loss must be nonnegative, got {l_hat}")));
    }
    let (n, t) = (n as f64, t as f64);
    let hedge_term = 2.0 * n * (t * (k as f64).ln()).sqrt();
    let centroid_term = t * n * l_hat;
    Ok(BoundTerms {
        hedge_term,
        centroid_term,
        total: hedge_term + centroid_term,
    })
}

/// Per-seed bound bookkeeping, one row of `bounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub seed: u64,
    pub n_users: usize,
    pub rounds: usize,
    pub k: usize,
    pub eta: f64,
    pub l_hat_centroids: f64,
    pub hedge_term: f64,
    pub centroid_term: f64,
    pub theoretical_bound: f64,
    /// EWC regret under `<p, l>` accounting.
    pub ewc_expected_regret: f64,
    /// EWC regret of the sampled recommendations.
    pub ewc_realized_regret: f64,
    pub bound_holds: bool,
    /// `(1/N) sum_i min(p_i, 1 - p_i)`
    pub mean_min_share: f64,
    pub oracle_ftl_regret: f64,
    /// `mean_min_share - 2 sqrt(ln K / T)`
    pub ftl_condition_rhs: f64,
    pub ftl_condition_holds: bool,
    pub degenerate_users: usize,
    pub clustering_converged: bool,
}

/// Whether `l_hat < mean_min_share - 2 sqrt(ln K / T)`.
pub fn beats_oracle_ftl_condition(l_hat: f64, mean_min_share: f64, k: usize, t: usize) -> bool {
    l_hat < mean_min_share - 2.0 * ((k as f64).ln() / t as f64).sqrt()
}

/// `sqrt(d ln^3(K T ln T / delta))`, or `None` when the log argument is at most 1.
pub fn linucb_rate_factor(t: usize, k: usize, delta: f64) -> Option<f64> {
    let t = t as f64;
    let arg = k as f64 * t * t.ln() / delta;
    if !(arg > 1.0 && arg.is_finite()) {
        return None;
    }
    Some((LINUCB_DIMENSION as f64 * arg.ln().powi(3)).sqrt())
}

/// Where LinUCB's median regret curve first drops below EWC's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "round")]
pub enum Crossover {
    /// 1-based round.
    AtRound(usize),
    NoneWithinHorizon,
}

impl std::fmt::Display for Crossover {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Crossover::AtRound(t) => write!(f, "round {t}"),
            Crossover::NoneWithinHorizon => f.write_str("none within horizon"),
        }
    }
}

/// First round at which `linucb < ewc`; identical curves cross at round 1.
pub fn empirical_crossover(ewc: &[f64], linucb: &[f64]) -> Crossover {
    if !ewc.is_empty() && ewc == linucb {
        return Crossover::AtRound(1);
    }
    ewc.iter()
        .zip(linucb)
        .position(|(e, l)| l < e)
        .map_or(Crossover::NoneWithinHorizon, |i| Crossover::AtRound(i + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverSummary {
    pub rounds: usize,
    pub empirical: Crossover,
    pub ewc_final_regret: f64,
    pub linucb_final_regret: f64,
    /// `1 - ewc / linucb` on the final median regret, in percent.
    pub reduction_percent: Option<f64>,
    pub l_hat_centroids: f64,
    /// `C` such that `C N sqrt(T d ln^3(K T ln T / delta))` equals LinUCB's final median regret.
    pub fitted_c: Option<f64>,
    /// `((C - 2) / l_hat)^2`; infinite when `l_hat` is zero and `C > 2`.
    pub predicted_threshold: Option<f64>,
    pub mean_min_share: f64,
    pub ftl_condition_rhs: f64,
    pub ftl_condition_holds: bool,
}

/// Compares the median EWC and LinUCB regret curves of a report.
pub fn crossover_analysis(report: &RegretReport, delta: f64) -> Result<CrossoverSummary> {
    let ewc = median_curve(report, PolicyKind::Ewc)
        .ok_or_else(|| EwcError::InvalidInput("report has no EWC curve".into()))?;
    let linucb = median_curve(report, PolicyKind::LinUcb)
        .ok_or_else(|| EwcError::InvalidInput("report has no LinUCB curve".into()))?;
    if report.bounds.is_empty() {
        return Err(EwcError::InvalidInput("report has no bound records".into()));
    }
    let rounds = ewc.len().min(linucb.len());
    let ewc_final = ewc.get(rounds.wrapping_sub(1)).copied().unwrap_or(0.0);
    let linucb_final = linucb.get(rounds.wrapping_sub(1)).copied().unwrap_or(0.0);

    let pick = |f: fn(&BoundRecord) -> f64| median(&report.bounds.iter().map(f).collect::<Vec<_>>());
    let l_hat = pick(|b| b.l_hat_centroids);
    let mean_min_share = pick(|b| b.mean_min_share);
    let n = pick(|b| b.n_users as f64);
    let k = report.bounds[0].k;

    let fitted_c = linucb_rate_factor(rounds, k, delta)
        .filter(|_| n > 0.0 && rounds > 0)
        .map(|factor| linucb_final / (n * (rounds as f64).sqrt() * factor));
    let predicted_threshold = fitted_c.and_then(|c| {
        if c <= 2.0 {
            None
        } else if l_hat == 0.0 {
            Some(f64::INFINITY)
        } else {
            Some(((c - 2.0) / l_hat).powi(2))
        }
    });
    let ftl_condition_rhs = mean_min_share - 2.0 * ((k as f64).ln() / rounds.max(1) as f64).sqrt();
    Ok(CrossoverSummary {
        rounds,
        empirical: empirical_crossover(&ewc[..rounds], &linucb[..rounds]),
        ewc_final_regret: ewc_final,
        linucb_final_regret: linucb_final,
        reduction_percent: (linucb_final > 0.0).then(|| 100.0 * (1.0 - ewc_final / linucb_final)),
        l_hat_centroids: l_hat,
        fitted_c,
        predicted_threshold,
        mean_min_share,
        ftl_condition_rhs,
        ftl_condition_holds: l_hat < ftl_condition_rhs,
    })
}
