//! Offline fitting of each training user's linear decision boundary.
//!
//! A primal subgradient solver (Pegasos) minimises the L2-regularised hinge
//! loss on standardised `(tau, e)` features with an augmented constant
//! feature; the resulting hyperplane is mapped back to raw coordinates and
//! canonicalised into `(b, s, o)` form.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{OptionIndex, Orientation, PreferenceParams, UserHistory};
use crate::error::{EwcError, Result};
use crate::seeding::{stream_rng, Stream};

/// One-class users get the boundary `tau = ±DEGENERATE_BIAS_FACTOR * max tau`,
/// outside every context they were observed in.
pub const DEGENERATE_BIAS_FACTOR: f64 = 2.0;

/// Perturbation applied to a zero `tau` weight before canonicalisation.
pub const ZERO_WEIGHT_NUDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatorFitConfig {
    /// Weight `lambda` of the `lambda/2 * ||w||^2` term.
    pub regularization: f64,
    /// Number of stochastic subgradient steps; the step size decays as `1 / (lambda t)`.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SeparatorFitConfig {
    fn default() -> Self {
        SeparatorFitConfig {
            regularization: 1e-3,
            iterations: 10_000,
            seed: 0,
        }
    }
}

impl SeparatorFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization.is_finite() && self.regularization > 0.0) {
            return Err(EwcError::Config(format!(
                "regularization must be positive, got {}",
                self.regularization
            )));
        }
        if self.iterations == 0 {
            return Err(EwcError::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fitted parameters plus whether the one-class fallback was used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparatorFit {
    pub params: PreferenceParams,
    pub degenerate: bool,
}

/// Hyperplane `w_tau * tau + w_e * e + w_0`; positive side is option 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearForm {
    pub w_tau: f64,
    pub w_e: f64,
    pub w_0: f64,
}

impl LinearForm {
    pub fn eval(&self, tau: f64, e: f64) -> f64 {
        self.w_tau * tau + self.w_e * e + self.w_0
    }
}

/// Rewrites a raw hyperplane as `(b, s, o)` so that the sign of the raw form
/// and the prediction rule agree wherever `w_tau != 0`.
pub fn canonicalize(form: LinearForm) -> Result<PreferenceParams> {
    let LinearForm {
        mut w_tau,
        w_e,
        w_0,
    } = form;
    if !(w_tau.is_finite() && w_e.is_finite() && w_0.is_finite()) {
        return Err(EwcError::InvalidInput("hyperplane weights must be finite".into()));
    }
    if w_tau == 0.0 && w_e == 0.0 {
        return Err(EwcError::InvalidInput(
            "hyperplane has no dependence on the context".into(),
        ));
    }
    if w_tau == 0.0 {
        w_tau = if w_e > 0.0 {
            -ZERO_WEIGHT_NUDGE
        } else {
            ZERO_WEIGHT_NUDGE
        };
    }
    PreferenceParams::new(
        -w_0 / w_tau,
        -w_e / w_tau,
        Orientation::from_sign(w_tau),
    )
}

fn degenerate_params(class: OptionIndex, history: &UserHistory) -> PreferenceParams {
    let max_tau = history.contexts().iter().map(|c| c.tau).fold(0.0, f64::max);
    let bias = match class {
        OptionIndex::Standard => DEGENERATE_BIAS_FACTOR * max_tau,
        OptionIndex::Eco => -DEGENERATE_BIAS_FACTOR * max_tau,
    };
    PreferenceParams {
        bias,
        slope: 0.0,
        orientation: Orientation::Positive,
    }
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Fits one user's separator from their history; deterministic in `config.seed`.
pub fn fit_user_separator(history: &UserHistory, config: &SeparatorFitConfig) -> Result<SeparatorFit> {
    config.validate()?;
    if history.is_one_class() {
        return Ok(SeparatorFit {
            params: degenerate_params(history.choices()[0], history),
            degenerate: true,
        });
    }

    let (tau_mean, tau_sd) = mean_and_scale(history.contexts().iter().map(|c| c.tau));
    let (e_mean, e_sd) = mean_and_scale(history.contexts().iter().map(|c| c.e));
    let samples: Vec<([f64; 3], f64)> = history
        .rounds()
        .map(|(c, y)| {
            let label = match y {
                OptionIndex::Eco => 1.0,
                OptionIndex::Standard => -1.0,
            };
            ([(c.tau - tau_mean) / tau_sd, (c.e - e_mean) / e_sd, 1.0], label)
        })
        .collect();

    let lambda = config.regularization;
    let radius = 1.0 / lambda.sqrt();
    let mut rng = stream_rng(config.seed, Stream::Separator, 0);
    let mut w = [0.0f64; 3];
    // suffix average over the second half of the run
    let average_from = config.iterations / 2 + 1;
    let mut avg = [0.0f64; 3];
    let mut averaged = 0usize;
    for t in 1..=config.iterations {
        let (x, y) = &samples[rng.random_range(0..samples.len())];
        let step = 1.0 / (lambda * t as f64);
        let score: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        let shrink = 1.0 - step * lambda;
        for wi in &mut w {
            *wi *= shrink;
        }
        if y * score < 1.0 {
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += step * y * xi;
            }
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            for wi in &mut w {
                *wi *= radius / norm;
            }
        }
        if t >= average_from {
            for (a, wi) in avg.iter_mut().zip(&w) {
                *a += wi;
            }
            averaged += 1;
        }
    }
    for a in &mut avg {
        *a /= averaged as f64;
    }

    let w_tau = avg[0] / tau_sd;
    let w_e = avg[1] / e_sd;
    let form = LinearForm {
        w_tau,
        w_e,
        w_0: avg[2] - w_tau * tau_mean - w_e * e_mean,
    };
    let params = match canonicalize(form) {
        Ok(p) => p,
        // all-zero weights: nothing learned, fall back to the majority class
        Err(_) => degenerate_params(majority(history), history),
    };
    Ok(SeparatorFit {
        params,
        degenerate: false,
    })
}

fn majority(history: &UserHistory) -> OptionIndex {
    if 2 * history.count_standard() >= history.len() {
        OptionIndex::Standard
    } else {
        OptionIndex::Eco
    }
}

/// Fits every user independently; user `i` uses a seed derived from `config.seed` and `i`.
pub fn fit_all_users(
    histories: &[UserHistory],
    config: &SeparatorFitConfig,
) -> Result<Vec<SeparatorFit>> {
    if histories.is_empty() {
        return Err(EwcError::InvalidInput("no training users to fit".into()));
    }
    config.validate()?;
    histories
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let per_user = SeparatorFitConfig {
                seed: crate::seeding::derive_seed(config.seed, Stream::Separator, i as u64),
                ..*config
            };
            fit_user_separator(h, &per_user)
        })
        .collect()
}
