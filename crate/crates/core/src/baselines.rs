//! Comparison policies: Follow-the-Leader, its hindsight oracle, disjoint
//! LinUCB, and the two oracles that know the generator's parameters.
//!
//! Every policy breaks ties towards option 1.

use serde::{Deserialize, Serialize};

use crate::choice::{predict_choice, OptionIndex, PreferenceParams, TravelContext, UserHistory};
use crate::error::{EwcError, Result};

/// Running choice counts for Follow-the-Leader.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtlState {
    pub count_standard: u64,
    pub count_eco: u64,
}

impl FtlState {
    /// Majority choice so far; option 1 on ties and before any observation.
    pub fn recommend(&self) -> OptionIndex {
        OptionIndex::from_indicator(self.count_eco > self.count_standard)
    }

    pub fn observe(&mut self, actual: OptionIndex) {
        match actual {
            OptionIndex::Standard => self.count_standard += 1,
            OptionIndex::Eco => self.count_eco += 1,
        }
    }
}

pub fn ftl_recommend(state: &FtlState) -> OptionIndex {
    state.recommend()
}

/// The option a hindsight oracle would fix for the whole history.
pub fn hindsight_majority(history: &UserHistory) -> OptionIndex {
    let standard = history.count_standard();
    OptionIndex::from_indicator(history.len() - standard > standard)
}

/// Mistakes of always playing the hindsight majority: `T * min(p, 1 - p)`
/// with `p` the share of option 1.
pub fn oracle_ftl_mistakes(history: &UserHistory) -> f64 {
    let standard = history.count_standard();
    standard.min(history.len() - standard) as f64
}

/// `alpha = sqrt(ln(2 T K / delta) / 2)`.
pub fn default_linucb_alpha(horizon: usize, num_arms: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EwcError::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if horizon == 0 || num_arms == 0 {
        return Err(EwcError::Config("horizon and arm count must be positive".into()));
    }
    Ok((0.5 * (2.0 * horizon as f64 * num_arms as f64 / delta).ln()).sqrt())
}

/// Ridge model of one arm: design matrix `A = I + sum x x^T` and response `b = sum r x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinUcbArm {
    pub design: [[f64; 2]; 2],
    pub response: [f64; 2],
}

impl Default for LinUcbArm {
    fn default() -> Self {
        LinUcbArm {
            design: [[1.0, 0.0], [0.0, 1.0]],
            response: [0.0, 0.0],
        }
    }
}

impl LinUcbArm {
    fn inverse(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.design;
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }

    pub fn estimate(&self) -> [f64; 2] {
        let inv = self.inverse();
        [
            inv[0][0] * self.response[0] + inv[0][1] * self.response[1],
            inv[1][0] * self.response[0] + inv[1][1] * self.response[1],
        ]
    }

    /// `x^T theta + alpha * sqrt(x^T A^-1 x)`.
    pub fn upper_confidence(&self, x: [f64; 2], alpha: f64) -> f64 {
        let inv = self.inverse();
        let theta = self.estimate();
        let mean = x[0] * theta[0] + x[1] * theta[1];
        let quad = x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1])
            + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1]);
        mean + alpha * quad.max(0.0).sqrt()
    }

    pub fn update(&mut self, x: [f64; 2], reward: f64) {
        for (i, row) in self.design.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += x[i] * x[j];
            }
        }
        self.response[0] += reward * x[0];
        self.response[1] += reward * x[1];
    }
}

/// Per-user disjoint LinUCB over the two route options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinUcbState {
    pub standard: LinUcbArm,
    pub eco: LinUcbArm,
    pub alpha: f64,
}

impl LinUcbState {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(EwcError::Config(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(LinUcbState {
            standard: LinUcbArm::default(),
            eco: LinUcbArm::default(),
            alpha,
        })
    }

    /// Arm features: `[1, 1]` for the standard route, `[tau, e]` for the eco route.
    pub fn features(option: OptionIndex, ctx: &TravelContext) -> [f64; 2] {
        match option {
            OptionIndex::Standard => [1.0, 1.0],
            OptionIndex::Eco => [ctx.tau, ctx.e],
        }
    }

    pub fn arm(&self, option: OptionIndex) -> &LinUcbArm {
        match option {
            OptionIndex::Standard => &self.standard,
            OptionIndex::Eco => &self.eco,
        }
    }

    fn arm_mut(&mut self, option: OptionIndex) -> &mut LinUcbArm {
        match option {
            OptionIndex::Standard => &mut self.standard,
            OptionIndex::Eco => &mut self.eco,
        }
    }

    pub fn upper_confidence(&self, option: OptionIndex, ctx: &TravelContext) -> f64 {
        self.arm(option)
            .upper_confidence(Self::features(option, ctx), self.alpha)
    }

    pub fn recommend(&self, ctx: &TravelContext) -> OptionIndex {
        let standard = self.upper_confidence(OptionIndex::Standard, ctx);
        let eco = self.upper_confidence(OptionIndex::Eco, ctx);
        OptionIndex::from_indicator(eco > standard)
    }

    /// Updates only the pulled arm, with reward 1 when it matched the user's choice.
    pub fn observe(&mut self, pulled: OptionIndex, ctx: &TravelContext, actual: OptionIndex) {
        let reward = if pulled == actual { 1.0 } else { 0.0 };
        let x = Self::features(pulled, ctx);
        self.arm_mut(pulled).update(x, reward);
    }

    /// Recommends, then learns from the user's choice. Returns the recommendation.
    pub fn step(&mut self, ctx: &TravelContext, actual: OptionIndex) -> OptionIndex {
        let pulled = self.recommend(ctx);
        self.observe(pulled, ctx, actual);
        pulled
    }
}

pub fn oracle_cluster_recommend(cluster_mean: &PreferenceParams, ctx: &TravelContext) -> OptionIndex {
    predict_choice(cluster_mean, ctx)
}

pub fn oracle_theta_recommend(theta_true: &PreferenceParams, ctx: &TravelContext) -> OptionIndex {
    predict_choice(theta_true, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{choice_loss, Orientation};
    use crate::seeding::StreamRng;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};

    fn ctx(tau: f64, e: f64) -> TravelContext {
        TravelContext::new(tau, e).unwrap()
    }

    fn history_from(choices: &[u8]) -> UserHistory {
        let choices: Vec<_> = choices.iter().map(|&c| OptionIndex::try_from(c).unwrap()).collect();
        UserHistory::new(vec![ctx(1.2, 0.8); choices.len()], choices).unwrap()
    }

    #[test]
    fn ftl_examples() {
        let s = |a, b| FtlState { count_standard: a, count_eco: b };
        assert_eq!(ftl_recommend(&s(3, 1)), OptionIndex::Standard);
        assert_eq!(ftl_recommend(&s(0, 0)), OptionIndex::Standard);
        assert_eq!(ftl_recommend(&s(5, 7)), OptionIndex::Eco);
        assert_eq!(ftl_recommend(&s(4, 4)), OptionIndex::Standard);
    }

    #[test]
    fn oracle_ftl_examples() {
        let mut seventy = vec![1u8; 28];
        seventy.extend([2u8; 12]);
        assert_eq!(oracle_ftl_mistakes(&history_from(&seventy)), 12.0);
        assert_eq!(oracle_ftl_mistakes(&history_from(&[2; 40])), 0.0);
        let mut half = vec![1u8; 20];
        half.extend([2u8; 20]);
        assert_eq!(oracle_ftl_mistakes(&history_from(&half)), 20.0);
    }

    /// Counts FTL mistakes by replaying the sequence.
    fn ftl_mistakes(choices: &[OptionIndex]) -> u64 {
        let mut s = FtlState::default();
        let mut mistakes = 0;
        for &y in choices {
            mistakes += u64::from(choice_loss(s.recommend(), y).value());
            s.observe(y);
        }
        mistakes
    }

    #[test]
    fn ftl_never_beats_hindsight_majority_exhaustive() {
        for len in 1..=14u32 {
            for bits in 0u32..(1 << len) {
                let choices: Vec<_> = (0..len)
                    .map(|i| OptionIndex::from_indicator(bits >> i & 1 == 1))
                    .collect();
                let h = UserHistory::new(vec![ctx(1.0, 1.0); choices.len()], choices.clone()).unwrap();
                assert!(ftl_mistakes(&choices) as f64 >= oracle_ftl_mistakes(&h));
            }
        }
    }

    #[test]
    fn linucb_initial_pick_uses_feature_norm() {
        let s = LinUcbState::new(1.0).unwrap();
        let c = ctx(1.2, 0.9);
        // ||[1.2, 0.9]|| = 1.5 > sqrt(2)
        assert!((s.upper_confidence(OptionIndex::Eco, &c) - 1.5).abs() < 1e-12);
        assert!((s.upper_confidence(OptionIndex::Standard, &c) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.recommend(&c), OptionIndex::Eco);
    }

    #[test]
    fn linucb_rank_one_update() {
        let mut s = LinUcbState::new(1.0).unwrap();
        let c = ctx(1.2, 0.9);
        s.observe(OptionIndex::Eco, &c, OptionIndex::Eco);
        let a = s.eco.design;
        assert!((a[0][0] - 2.44).abs() < 1e-12);
        assert!((a[0][1] - 1.08).abs() < 1e-12);
        assert!((a[1][0] - 1.08).abs() < 1e-12);
        assert!((a[1][1] - 1.81).abs() < 1e-12);
        assert_eq!(s.eco.response, [1.2, 0.9]);
        assert_eq!(s.standard, LinUcbArm::default());
    }

    #[test]
    fn greedy_linucb_learns_constant_user() {
        let mut s = LinUcbState::new(1.0).unwrap();
        let mut rng = StreamRng::seed_from_u64(8);
        for _ in 0..40 {
            let c = ctx(rng.random_range(1.0..1.5), rng.random_range(0.5..1.0));
            s.step(&c, OptionIndex::Standard);
        }
        s.alpha = 0.0;
        for _ in 0..20 {
            let c = ctx(rng.random_range(1.0..1.5), rng.random_range(0.5..1.0));
            assert_eq!(s.recommend(&c), OptionIndex::Standard);
        }
    }

    #[test]
    fn default_alpha_formula() {
        let alpha = default_linucb_alpha(40, 2, 0.1).unwrap();
        assert!((alpha - (0.5 * 1600f64.ln()).sqrt()).abs() < 1e-12);
        assert!(default_linucb_alpha(40, 2, 0.0).is_err());
    }

    #[test]
    fn oracle_examples() {
        let c = ctx(1.2, 0.9);
        let pos = PreferenceParams::new(0.0, 1.0, Orientation::Positive).unwrap();
        let neg = PreferenceParams::new(0.0, 1.0, Orientation::Negative).unwrap();
        assert_eq!(oracle_cluster_recommend(&pos, &c), OptionIndex::Eco);
        assert_eq!(oracle_cluster_recommend(&neg, &c), OptionIndex::Standard);
        assert_eq!(oracle_cluster_recommend(&pos, &c), oracle_theta_recommend(&pos, &c));
        assert_eq!(oracle_theta_recommend(&pos, &ctx(1.0, 1.0)), OptionIndex::Standard);
    }

    fn min_eigenvalue(a: [[f64; 2]; 2]) -> f64 {
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
    }

    proptest! {
        #[test]
        fn linucb_designs_stay_positive_definite(
            rounds in proptest::collection::vec((1.0f64..1.5, 0.5f64..1.0, proptest::bool::ANY), 1..80),
            alpha in 0.0f64..3.0,
        ) {
            let mut s = LinUcbState::new(alpha).unwrap();
            for (tau, e, eco) in rounds {
                s.step(&ctx(tau, e), OptionIndex::from_indicator(eco));
                for arm in [&s.standard, &s.eco] {
                    prop_assert!(arm.design[0][1] == arm.design[1][0]);
                    prop_assert!(min_eigenvalue(arm.design) > 0.0);
                }
            }
        }
    }
}
