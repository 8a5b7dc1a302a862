//! Expert-with-Clustering (EWC): a hierarchical contextual bandit for
//! learning route preferences.
//!
//! The offline phase fits a linear decision boundary per training user
//! ([`offline`]) and clusters the boundaries with a loss-guided K-Means
//! ([`clustering`]). Each centroid then acts as an expert, and the online
//! phase runs Hedge ([`hedge`]) per test user over those experts.
//! [`baselines`] holds the comparison policies, [`simulation`] the synthetic
//! population generator and [`harness`] the experiment runner and reports.

pub mod baselines;
pub mod choice;
pub mod clustering;
pub mod error;
pub mod harness;
pub mod hedge;
pub mod offline;
pub mod seeding;
pub mod simulation;

pub use choice::{
    choice_loss, expert_loss_vector, predict_choice, LossValue, OptionIndex, Orientation,
    PreferenceParams, TravelContext, UserHistory,
};
pub use error::{ErrorCategory, EwcError, Result};
