//! Exact expectations for replication plans and exhaustive action search.
//!
//! With independent per-path losses, the probability that a round's packet
//! is lost end-to-end is the product of the loss probabilities over the
//! round's path subset, so the expected information loss rate of a plan is
//! computable in closed form. This gives an oracle that is independent of
//! the Monte-Carlo channel simulation and of anything the agent learns.

use crate::agent::{ordering_consistent, Action, ACTION_SPACE, PLR_TIE_EPS};
use crate::wrr::{build_cycle_plan, PathWeights, SchedulingClass};
use crate::{Error, Result};

/// Exact expected information loss rate of one cycle plan:
/// the mean over rounds of the product of the round's path loss
/// probabilities.
pub fn analytic_info_loss(
    class: SchedulingClass,
    weights: &PathWeights,
    loss_probs: &[f64],
    k: usize,
) -> Result<f64> {
    if loss_probs.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} loss probabilities for {} weighted paths",
            loss_probs.len(),
            weights.len()
        )));
    }
    for (i, &p) in loss_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::Config(format!("loss probability {p} on path {i} out of range")));
        }
    }
    let plan = build_cycle_plan(class, weights, k)?;
    let total: f64 = plan
        .rounds
        .iter()
        .map(|round| round.paths.iter().map(|&p| loss_probs[p]).product::<f64>())
        .sum();
    Ok(total / k as f64)
}

/// One row of the exhaustive action evaluation.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub action: Action,
    pub f_bar: f64,
    pub predicted_loss: f64,
    pub feasible: bool,
    /// Whether the action's weights follow the ascending loss ordering.
    pub ordering_match: bool,
}

/// Evaluate every action against the given true loss probabilities.
pub fn action_table(loss_probs: &[f64], phi_th: f64, k: usize) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::with_capacity(ACTION_SPACE);
    for index in 0..ACTION_SPACE {
        let action = Action::from_index(index).expect("index in range");
        let weights = action.weights();
        let predicted_loss = analytic_info_loss(action.class(), &weights, loss_probs, k)?;
        rows.push(OracleRow {
            action,
            f_bar: action.f_bar(),
            predicted_loss,
            feasible: predicted_loss <= phi_th,
            ordering_match: ordering_consistent(&weights, loss_probs, PLR_TIE_EPS),
        });
    }
    Ok(rows)
}

/// The ground-truth best action: the feasible action with minimal average
/// redundancy, preferring weights that match the ascending loss ordering,
/// then the lowest action index. When nothing is feasible, the
/// full-replication action with matching ordering.
pub fn optimal_action(loss_probs: &[f64], phi_th: f64, k: usize) -> Result<Action> {
    let rows = action_table(loss_probs, phi_th, k)?;
    let mut best: Option<&OracleRow> = None;
    for row in rows.iter().filter(|r| r.feasible) {
        let better = match best {
            None => true,
            Some(b) => {
                row.f_bar < b.f_bar - 1e-12
                    || ((row.f_bar - b.f_bar).abs() <= 1e-12
                        && row.ordering_match
                        && !b.ordering_match)
            }
        };
        if better {
            best = Some(row);
        }
    }
    if let Some(row) = best {
        return Ok(row.action);
    }
    // Nothing feasible: maximum protection with consistent ordering.
    rows.iter()
        .filter(|r| r.action.class() == SchedulingClass::G && r.ordering_match)
        .map(|r| r.action)
        .next()
        .ok_or_else(|| Error::Config("no ordering-consistent full-replication action".into()))
}
