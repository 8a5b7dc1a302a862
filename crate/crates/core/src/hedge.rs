//! Prediction with expert advice via exponential weights (Hedge).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EwcError, Result};

/// Tolerance for the probability vector summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Learning rate `sqrt(8 ln K / T)`, which tunes Hedge to the `O(sqrt(T log K))` rate.
///
/// With a single expert the rate is irrelevant and 1.0 is returned so the
/// state stays valid.
pub fn default_learning_rate(num_experts: usize, horizon: usize) -> f64 {
    if num_experts <= 1 || horizon == 0 {
        return 1.0;
    }
    (8.0 * (num_experts as f64).ln() / horizon as f64).sqrt()
}

/// How [`HedgeState::select_expert`] turns probabilities into a choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Draw an expert from the current distribution.
    #[default]
    Sample,
    /// Take the most probable expert (lowest index on ties).
    Argmax,
}

/// One user's distribution over `K` experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    probs: Vec<f64>,
    eta: f64,
    cumulative_losses: Vec<f64>,
}

impl HedgeState {
    pub fn init_uniform(num_experts: usize, eta: f64) -> Result<Self> {
        if num_experts == 0 {
            return Err(EwcError::InvalidInput("Hedge needs at least one expert".into()));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(EwcError::InvalidInput(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        Ok(HedgeState {
            probs: vec![1.0 / num_experts as f64; num_experts],
            eta,
            cumulative_losses: vec![0.0; num_experts],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cumulative_losses(&self) -> &[f64] {
        &self.cumulative_losses
    }

    pub fn num_experts(&self) -> usize {
        self.probs.len()
    }

    /// Inverse-CDF draw from `probs` using a single uniform variate.
    pub fn select_expert<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = k;
            }
            acc += p;
            if u < acc {
                return k;
            }
        }
        // rounding left u above the accumulated mass
        last_positive
    }

    pub fn argmax_expert(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn choose<R: Rng + ?Sized>(&self, mode: SelectionMode, rng: &mut R) -> usize {
        match mode {
            SelectionMode::Sample => self.select_expert(rng),
            SelectionMode::Argmax => self.argmax_expert(),
        }
    }

    /// Expected loss `<p, l>` of the current distribution.
    pub fn expected_loss(&self, losses: &[f64]) -> f64 {
        self.probs.iter().zip(losses).map(|(p, l)| p * l).sum()
    }

    /// Multiplicative-weights update `p(k) <- p(k) exp(-eta l(k)) / Z`.
    pub fn update(&mut self, losses: &[f64]) -> Result<()> {
        if losses.len() != self.probs.len() {
            return Err(EwcError::InvalidInput(format!(
                "expected {} losses, got {}",
                self.probs.len(),
                losses.len()
            )));
        }
        if let Some(bad) = losses.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(EwcError::InvalidInput(format!(
                "losses must lie in [0, 1], got {bad}"
            )));
        }
        // Shifting by the smallest loss leaves the normalized result unchanged
        // and keeps the best expert's factor at exactly 1.
        let min_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (p, &l) in self.probs.iter_mut().zip(losses) {
            *p *= (-self.eta * (l - min_loss)).exp();
            total += *p;
        }
        for p in &mut self.probs {
            *p /= total;
        }
        for (acc, &l) in self.cumulative_losses.iter_mut().zip(losses) {
            *acc += l;
        }
        Ok(())
    }
}
