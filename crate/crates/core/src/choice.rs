//! Route-choice domain types, the linear prediction rule and the 0/1 loss.
//!
//! Each decision round offers two options: the standard route (option 1),
//! whose relative metrics are always `[1, 1]`, and the eco route (option 2),
//! described by its travel time and emissions relative to the standard one.
//! Only the eco route's metrics are stored.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EwcError, Result};

/// One of the two route options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum OptionIndex {
    Standard = 1,
    Eco = 2,
}

impl OptionIndex {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// Maps a `{0, 1}` indicator onto the option set: `option = 1 + indicator`.
    pub fn from_indicator(indicator: bool) -> Self {
        if indicator {
            OptionIndex::Eco
        } else {
            OptionIndex::Standard
        }
    }
}

impl TryFrom<u8> for OptionIndex {
    type Error = EwcError;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(OptionIndex::Standard),
            2 => Ok(OptionIndex::Eco),
            other => Err(EwcError::InvalidInput(format!(
                "option index must be 1 or 2, got {other}"
            ))),
        }
    }
}

impl From<OptionIndex> for u8 {
    fn from(value: OptionIndex) -> Self {
        value.as_u8()
    }
}

impl fmt::Display for OptionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Eco-route travel time (`tau`) and emissions (`e`) relative to the standard route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelContext {
    pub tau: f64,
    pub e: f64,
}

impl TravelContext {
    pub fn new(tau: f64, e: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0 && e.is_finite() && e > 0.0) {
            return Err(EwcError::InvalidInput(format!(
                "travel ratios must be finite and positive, got tau={tau}, e={e}"
            )));
        }
        Ok(TravelContext { tau, e })
    }
}

/// Orientation of a decision boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Orientation {
    Positive,
    Negative,
}

impl Orientation {
    /// Sign of `x`, with zero mapped to `Positive`.
    pub fn from_sign(x: f64) -> Self {
        if x < 0.0 {
            Orientation::Negative
        } else {
            Orientation::Positive
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Orientation::Positive => 1.0,
            Orientation::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Positive => Orientation::Negative,
            Orientation::Negative => Orientation::Positive,
        }
    }
}

impl TryFrom<i8> for Orientation {
    type Error = EwcError;

    fn try_from(value: i8) -> Result<Self> {
        match value {
            1 => Ok(Orientation::Positive),
            -1 => Ok(Orientation::Negative),
            other => Err(EwcError::InvalidInput(format!(
                "orientation must be -1 or +1, got {other}"
            ))),
        }
    }
}

impl From<Orientation> for i8 {
    fn from(value: Orientation) -> Self {
        match value {
            Orientation::Positive => 1,
            Orientation::Negative => -1,
        }
    }
}

/// A user's linear decision boundary `tau = slope * e + bias`, with an
/// orientation selecting which side prefers the eco route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    #[serde(rename = "b")]
    pub bias: f64,
    #[serde(rename = "s")]
    pub slope: f64,
    #[serde(rename = "o")]
    pub orientation: Orientation,
}

impl PreferenceParams {
    pub fn new(bias: f64, slope: f64, orientation: Orientation) -> Result<Self> {
        if !(bias.is_finite() && slope.is_finite()) {
            return Err(EwcError::InvalidInput(format!(
                "bias and slope must be finite, got b={bias}, s={slope}"
            )));
        }
        Ok(PreferenceParams {
            bias,
            slope,
            orientation,
        })
    }

    /// Signed margin `o * (tau - s*e - b)`; positive favours the eco route.
    pub fn margin(&self, ctx: &TravelContext) -> f64 {
        self.orientation.as_f64() * (ctx.tau - self.slope * ctx.e - self.bias)
    }

    /// The parameters as a point `[b, s, o]` in parameter space.
    pub fn to_vector(&self) -> [f64; 3] {
        [self.bias, self.slope, self.orientation.as_f64()]
    }
}

/// Predicted choice: option 2 when the margin is strictly positive, otherwise option 1.
pub fn predict_choice(params: &PreferenceParams, ctx: &TravelContext) -> OptionIndex {
    OptionIndex::from_indicator(params.margin(ctx) > 0.0)
}

/// Squared-difference loss between two options, which is always 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LossValue(u8);

impl LossValue {
    pub const ZERO: LossValue = LossValue(0);
    pub const ONE: LossValue = LossValue(1);

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }
}

pub fn choice_loss(predicted: OptionIndex, actual: OptionIndex) -> LossValue {
    if predicted == actual {
        LossValue::ZERO
    } else {
        LossValue::ONE
    }
}

/// Loss of every expert (centroid) on one round.
pub fn expert_loss_vector(
    experts: &[PreferenceParams],
    ctx: &TravelContext,
    actual: OptionIndex,
) -> Vec<LossValue> {
    experts
        .iter()
        .map(|c| choice_loss(predict_choice(c, ctx), actual))
        .collect()
}

/// A user's sequence of contexts and the choices made in them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    contexts: Vec<TravelContext>,
    choices: Vec<OptionIndex>,
}

impl UserHistory {
    pub fn new(contexts: Vec<TravelContext>, choices: Vec<OptionIndex>) -> Result<Self> {
        if contexts.len() != choices.len() {
            return Err(EwcError::InvalidInput(format!(
                "history has {} contexts but {} choices",
                contexts.len(),
                choices.len()
            )));
        }
        if contexts.is_empty() {
            return Err(EwcError::InvalidInput("history must be nonempty".into()));
        }
        Ok(UserHistory { contexts, choices })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn contexts(&self) -> &[TravelContext] {
        &self.contexts
    }

    pub fn choices(&self) -> &[OptionIndex] {
        &self.choices
    }

    pub fn rounds(&self) -> impl Iterator<Item = (&TravelContext, OptionIndex)> + '_ {
        self.contexts.iter().zip(self.choices.iter().copied())
    }

    /// Number of rounds on which the user picked option 1.
    pub fn count_standard(&self) -> usize {
        self.choices
            .iter()
            .filter(|&&c| c == OptionIndex::Standard)
            .count()
    }

    /// Whether every recorded choice is the same option.
    pub fn is_one_class(&self) -> bool {
        let n1 = self.count_standard();
        n1 == 0 || n1 == self.len()
    }
}
