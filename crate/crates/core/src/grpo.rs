//! Desk-scale reference implementation of the GRPO math: F1 outcome reward,
//! group-wise advantage normalization, per-token clipped surrogate, KL
//! penalty, and the full objective over one group.
//!
//! For a group of G sampled outputs with rewards r_i and per-token importance
//! ratios rho_{i,t} = exp(cur_{i,t} - old_{i,t}):
//!
//!   A_i = (r_i - mean(r)) / (std(r) + eps_std)        (sample std, n-1)
//!   L   = -[ (1/G) sum_i sum_t min(rho*A_i, clip(rho, 1-eps, 1+eps)*A_i)
//!            - beta * KL ]
//!
//! KL is estimated per token as exp(d) - d - 1 with d = ref - cur (always
//! non-negative, zero iff the policies agree) and aggregated as the mean over
//! all tokens of all outputs. The kernel operates on caller-supplied
//! log-probabilities; there is no model inference here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::metrics::token_f1;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("group size must be at least 2 (got {0})")]
    GroupTooSmall(usize),
    #[error("output {index}: log-prob sequences have unequal lengths (cur {cur}, old {old}, ref {reference})")]
    UnequalLengths {
        index: usize,
        cur: usize,
        old: usize,
        reference: usize,
    },
    #[error("rewards length {rewards} does not match outputs length {outputs}")]
    RewardOutputMismatch { rewards: usize, outputs: usize },
    #[error("eps_clip must be in (0, 1) (got {0})")]
    BadEpsClip(f64),
    #[error("beta_kl must be >= 0 (got {0})")]
    BadBetaKl(f64),
}

/// Outcome reward: token-level F1 between prediction and gold answer.
pub fn f1_reward(pred: &str, gold: &str) -> f64 {
    token_f1(pred, gold)
}

/// Group-wise advantage normalization: subtract the mean, divide by the
/// sample standard deviation (n-1) plus `eps_std`. A group with (near-)zero
/// variance gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let std = var.sqrt();
    if std < eps_std || std == 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(rewards
        .iter()
        .map(|r| (r - mean) / (std + eps_std))
        .collect())
}

/// Per-token clipped surrogate: min of the unclipped and clipped products.
pub fn clipped_term(ratio: f64, adv: f64, eps_clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (ratio * adv).min(clipped * adv)
}

/// Non-negative per-token KL estimator: with d = ref - cur, returns
/// exp(d) - d - 1 (computed as expm1(d) - d for accuracy near zero).
pub fn kl_penalty(cur_logprob: f64, ref_logprob: f64) -> f64 {
    let d = ref_logprob - cur_logprob;
    d.exp_m1() - d
}

/// Per-token log-probabilities of one output under the three policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputLogProbs {
    /// log pi_theta
    pub cur: Vec<f64>,
    /// log pi_theta_old (behavior policy)
    pub old: Vec<f64>,
    /// log pi_ref (reference policy)
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
}

/// One GRPO group: rewards plus per-output token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub rewards: Vec<f64>,
    pub outputs: Vec<OutputLogProbs>,
    #[serde(default = "default_eps_clip")]
    pub eps_clip: f64,
    #[serde(default = "default_beta_kl")]
    pub beta_kl: f64,
    #[serde(default = "default_eps_std")]
    pub eps_std: f64,
}

fn default_eps_clip() -> f64 {
    0.2
}

fn default_beta_kl() -> f64 {
    1e-3
}

fn default_eps_std() -> f64 {
    1e-6
}

impl GrpoGroup {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.rewards.len() != self.outputs.len() {
            return Err(GrpoError::RewardOutputMismatch {
                rewards: self.rewards.len(),
                outputs: self.outputs.len(),
            });
        }
        if self.rewards.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.rewards.len()));
        }
        for (index, output) in self.outputs.iter().enumerate() {
            if output.cur.len() != output.old.len() || output.cur.len() != output.reference.len() {
                return Err(GrpoError::UnequalLengths {
                    index,
                    cur: output.cur.len(),
                    old: output.old.len(),
                    reference: output.reference.len(),
                });
            }
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(GrpoError::BadEpsClip(self.eps_clip));
        }
        if self.beta_kl < 0.0 {
            return Err(GrpoError::BadBetaKl(self.beta_kl));
        }
        Ok(())
    }
}

/// Aggregation choices surfaced by the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    /// Divide each output's surrogate sum by its token count. Off by default:
    /// the printed objective sums tokens without a per-output normalizer.
    pub normalize_surrogate_by_length: bool,
    /// Aggregate the KL term as a mean over all tokens (default) instead of
    /// a sum.
    pub kl_mean_over_tokens: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            normalize_surrogate_by_length: false,
            kl_mean_over_tokens: true,
        }
    }
}

/// Fully expanded evaluation of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvaluation {
    pub advantages: Vec<f64>,
    /// Per output, per token: min(rho*A, clip(rho)*A).
    pub clipped_terms: Vec<Vec<f64>>,
    pub surrogate: f64,
    pub kl: f64,
    pub objective: f64,
}

/// Evaluate the GRPO objective over one group, returning every intermediate
/// quantity. The objective carries the leading minus sign: lower is better
/// for the optimizer.
pub fn evaluate_group(
    group: &GrpoGroup,
    options: ObjectiveOptions,
) -> Result<GroupEvaluation, GrpoError> {
    group.validate()?;
    let advantages = group_advantages(&group.rewards, group.eps_std)?;
    let g = group.rewards.len() as f64;

    let mut surrogate = 0.0;
    let mut clipped_terms = Vec::with_capacity(group.outputs.len());
    let mut kl_sum = 0.0;
    let mut token_count = 0usize;
    for (i, output) in group.outputs.iter().enumerate() {
        let mut terms = Vec::with_capacity(output.cur.len());
        let mut output_sum = 0.0;
        for t in 0..output.cur.len() {
            let ratio = (output.cur[t] - output.old[t]).exp();
            let term = clipped_term(ratio, advantages[i], group.eps_clip);
            output_sum += term;
            terms.push(term);
            kl_sum += kl_penalty(output.cur[t], output.reference[t]);
            token_count += 1;
        }
        if options.normalize_surrogate_by_length && !output.cur.is_empty() {
            output_sum /= output.cur.len() as f64;
        }
        surrogate += output_sum;
        clipped_terms.push(terms);
    }
    surrogate /= g;

    let kl = if options.kl_mean_over_tokens && token_count > 0 {
        kl_sum / token_count as f64
    } else {
        kl_sum
    };

    let objective = -(surrogate - group.beta_kl * kl);
    Ok(GroupEvaluation {
        advantages,
        clipped_terms,
        surrogate,
        kl,
        objective,
    })
}

/// The objective value alone.
pub fn grpo_objective(group: &GrpoGroup) -> Result<f64, GrpoError> {
    Ok(evaluate_group(group, ObjectiveOptions::default())?.objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantages_match_hand_computation() {
        let adv = group_advantages(&[1.0, 0.0], 0.0).unwrap();
        let expected = 1.0 / std::f64::consts::SQRT_2; // mean 0.5, sample std 1/sqrt(2)
        assert!((adv[0] - expected).abs() < 1e-12, "got {adv:?}");
        assert!((adv[1] + expected).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_gives_zero_advantages() {
        let adv = group_advantages(&[0.5, 0.5, 0.5], 1e-6).unwrap();
        assert_eq!(adv, vec![0.0, 0.0, 0.0]);
        // and no NaN even with eps_std = 0
        let adv = group_advantages(&[0.5, 0.5], 0.0).unwrap();
        assert_eq!(adv, vec![0.0, 0.0]);
    }

    #[test]
    fn advantages_invariant_under_positive_affine_reward_maps() {
        let rewards = [0.9, 0.1, 0.4, 0.7];
        let mapped: Vec<f64> = rewards.iter().map(|r| 2.0 * r + 3.0).collect();
        let a = group_advantages(&rewards, 0.0).unwrap();
        let b = group_advantages(&mapped, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_element_group_is_an_error() {
        assert!(matches!(
            group_advantages(&[1.0], 0.0),
            Err(GrpoError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn clipped_term_cases() {
        assert_eq!(clipped_term(1.0, 2.5, 0.2), 2.5);
        assert_eq!(clipped_term(1.0, -2.5, 0.2), -2.5);
        assert!((clipped_term(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn kl_penalty_cases() {
        assert_eq!(kl_penalty(-1.0, -1.0), 0.0);
        let expected = 0.1f64.exp() - 1.1; // 0.0051709...
        assert!((kl_penalty(-1.1, -1.0) - expected).abs() < 1e-12);
        assert!(kl_penalty(-0.5, -1.5) > 0.0);
        assert!(kl_penalty(-1.5, -0.5) > 0.0);
    }

    fn flat_group(rewards: Vec<f64>, logprob: f64, tokens: usize) -> GrpoGroup {
        let outputs = rewards
            .iter()
            .map(|_| OutputLogProbs {
                cur: vec![logprob; tokens],
                old: vec![logprob; tokens],
                reference: vec![logprob; tokens],
            })
            .collect();
        GrpoGroup {
            rewards,
            outputs,
            eps_clip: 0.2,
            beta_kl: 1e-3,
            eps_std: 1e-6,
        }
    }

    #[test]
    fn equal_rewards_leave_only_the_kl_term() {
        let mut group = flat_group(vec![0.5, 0.5, 0.5], -1.0, 3);
        // introduce KL: reference disagrees with current
        for output in &mut group.outputs {
            output.reference = vec![-1.3; 3];
        }
        let eval = evaluate_group(&group, ObjectiveOptions::default()).unwrap();
        assert_eq!(eval.surrogate, 0.0);
        assert!(eval.kl > 0.0);
        assert!((eval.objective - group.beta_kl * eval.kl).abs() < 1e-15);
    }

    #[test]
    fn on_policy_single_token_cancels() {
        let mut group = flat_group(vec![1.0, 0.0], -0.7, 1);
        group.beta_kl = 0.0;
        let eval = evaluate_group(&group, ObjectiveOptions::default()).unwrap();
        // advantages are +-1/sqrt(2) (eps_std floor shifts them negligibly)
        assert!(eval.objective.abs() < 1e-6);
    }

    #[test]
    fn zero_kl_means_beta_does_not_matter() {
        let base = flat_group(vec![1.0, 0.2], -0.4, 4);
        let mut with_beta = base.clone();
        with_beta.beta_kl = 1e-3;
        let mut without_beta = base;
        without_beta.beta_kl = 0.0;
        let a = grpo_objective(&with_beta).unwrap();
        let b = grpo_objective(&without_beta).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut group = flat_group(vec![1.0, 0.0], -1.0, 2);
        group.outputs[0].old.pop();
        assert!(matches!(
            evaluate_group(&group, ObjectiveOptions::default()),
            Err(GrpoError::UnequalLengths { .. })
        ));

        let mut group = flat_group(vec![1.0, 0.0], -1.0, 2);
        group.eps_clip = 1.5;
        assert!(matches!(
            evaluate_group(&group, ObjectiveOptions::default()),
            Err(GrpoError::BadEpsClip(_))
        ));
    }

    #[test]
    fn f1_reward_delegates_to_token_f1() {
        assert_eq!(f1_reward("exact phrase", "exact phrase"), 1.0);
        assert_eq!(f1_reward("Daniel Webster", "Fletcher Webster"), 0.5);
        assert_eq!(f1_reward("alpha", "beta"), 0.0);
    }

    #[test]
    fn length_normalization_flag_changes_unequal_length_groups() {
        let group = GrpoGroup {
            rewards: vec![1.0, 0.0],
            outputs: vec![
                OutputLogProbs {
                    cur: vec![-0.5; 4],
                    old: vec![-0.6; 4],
                    reference: vec![-0.5; 4],
                },
                OutputLogProbs {
                    cur: vec![-0.5],
                    old: vec![-0.6],
                    reference: vec![-0.5],
                },
            ],
            eps_clip: 0.2,
            beta_kl: 0.0,
            eps_std: 0.0,
        };
        let printed = evaluate_group(&group, ObjectiveOptions::default()).unwrap();
        let normalized = evaluate_group(
            &group,
            ObjectiveOptions {
                normalize_surrogate_by_length: true,
                kl_mean_over_tokens: true,
            },
        )
        .unwrap();
        assert_ne!(printed.objective, normalized.objective);
    }
}
