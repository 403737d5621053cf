//! Epsilon-smoothed binary answer verification.
//!
//! The verifier compares a predicted answer against the task's canonical
//! gold answer by exact token equality — no partial credit, no
//! normalization of the prediction (a predicted `07` does not match gold
//! `7`; gold answers are canonical by construction). Smoothing mixes the
//! hard check with a floor probability so the log score stays finite:
//!
//! ```text
//!     log Q~(y | x, z) = log(eps + (1 - eps) * 1[correct])
//!                      = log(eps) - log(eps) * r_acc        (exact)
//! ```
//!
//! so maximizing the smoothed log score is the same objective as the
//! binary accuracy reward `r_acc`, up to the constant factor `-log(eps)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::TaskInstance;
use crate::vocab::TokenId;

#[derive(Debug, Error, PartialEq)]
pub enum VerifierError {
    #[error("smoothing epsilon must lie strictly inside (0, 1), got {0}")]
    EpsilonOutOfRange(f64),
}

/// Verifier settings; `epsilon` is the smoothing floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub epsilon: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig { epsilon: 0.01 }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), VerifierError> {
        if self.epsilon > 0.0 && self.epsilon < 1.0 {
            Ok(())
        } else {
            Err(VerifierError::EpsilonOutOfRange(self.epsilon))
        }
    }
}

/// Exact token-level equality against a canonical gold answer. An empty
/// prediction never matches (gold answers are non-empty by construction).
pub fn check_answer_ids(gold: &[TokenId], predicted: &[TokenId]) -> bool {
    !predicted.is_empty() && predicted == gold
}

/// [`check_answer_ids`] against a task's gold answer.
pub fn check_answer(task: &TaskInstance, predicted: &[TokenId]) -> bool {
    check_answer_ids(&task.gold, predicted)
}

/// Log of the epsilon-smoothed verifier: `0` when correct, `log(eps)` when
/// wrong. Errors unless `0 < eps < 1`.
pub fn log_smoothed_verifier(correct: bool, epsilon: f64) -> Result<f64, VerifierError> {
    VerifierConfig { epsilon }.validate()?;
    Ok(if correct { 0.0 } else { epsilon.ln() })
}

/// Binary accuracy reward in `{0.0, 1.0}`.
pub fn accuracy_reward(task: &TaskInstance, predicted: &[TokenId]) -> f64 {
    if check_answer(task, predicted) {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskFamily;

    fn task(gold: Vec<TokenId>) -> TaskInstance {
        TaskInstance {
            id: 0,
            family: TaskFamily::ModChain,
            difficulty: 1,
            prompt: vec![0, 6],
            gold,
            seed: 0,
        }
    }

    #[test]
    fn exact_match_only() {
        let t = task(vec![10]); // "7"
        assert!(check_answer(&t, &[10]));
        assert!(!check_answer(&t, &[10, 10]));
        assert!(!check_answer(&t, &[9]));
        // Empty predictions never match.
        assert!(!check_answer(&t, &[]));
        // A non-canonical "07" (ids [3, 10]) does not match gold "7".
        assert!(!check_answer(&t, &[3, 10]));
        assert_eq!(accuracy_reward(&t, &[10]), 1.0);
        assert_eq!(accuracy_reward(&t, &[9]), 0.0);
    }

    #[test]
    fn smoothed_log_score_values() {
        // ln(0.01) and ln(0.5), frozen.
        assert_eq!(log_smoothed_verifier(true, 0.01).unwrap(), 0.0);
        let wrong = log_smoothed_verifier(false, 0.01).unwrap();
        assert!((wrong - (-4.6051701859880909)).abs() < 1e-15);
        let half = log_smoothed_verifier(false, 0.5).unwrap();
        assert!((half - (-0.69314718055994529)).abs() < 1e-15);
    }

    #[test]
    fn smoothing_is_affine_in_accuracy() {
        // log Q~ == log(eps) - log(eps) * r_acc, exactly, at r_acc in {0,1}.
        for eps in [0.01, 0.1, 0.5, 0.999] {
            for correct in [false, true] {
                let r_acc = if correct { 1.0 } else { 0.0 };
                let lhs = log_smoothed_verifier(correct, eps).unwrap();
                let rhs = eps.ln() - eps.ln() * r_acc;
                assert_eq!(lhs, rhs, "eps {eps}, correct {correct}");
            }
        }
    }

    #[test]
    fn epsilon_domain_is_enforced() {
        for eps in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                log_smoothed_verifier(true, eps),
                Err(VerifierError::EpsilonOutOfRange(_))
            ));
        }
        assert!(VerifierConfig::default().validate().is_ok());
        assert_eq!(VerifierConfig::default().epsilon, 0.01);
    }
}
