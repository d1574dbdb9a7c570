//! Joint risk of an agent from its intervention score and, for pedestrians,
//! its attentiveness toward the ego vehicle:
//!
//! ```text
//! s_risk = (s_roi + w * (1 - s_look)) / (1 + w)
//! ```
//!
//! With the default `w = 1` both sources count equally. Agents that are not
//! pedestrians take the neutral `s_look = 0.5`, so their relative order is
//! unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::InterventionResult;

/// `s_look` used for agents without an attentiveness estimate.
pub const NEUTRAL_LOOK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointRisk {
    pub s_roi: f64,
    pub s_look: f64,
    pub s_risk: f64,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {v} lies outside [0, 1]")))
    }
}

/// Equal-weight joint risk.
pub fn joint_risk(s_roi: f64, s_look: f64) -> Result<f64> {
    weighted_joint_risk(s_roi, s_look, 1.0)
}

/// Joint risk with attentiveness weight `w` relative to the intervention
/// score.
pub fn weighted_joint_risk(s_roi: f64, s_look: f64, w: f64) -> Result<f64> {
    unit("s_roi", s_roi)?;
    unit("s_look", s_look)?;
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::InvalidInput(format!("attention weight {w} must be finite and >= 0")));
    }
    if w == 1.0 {
        return Ok((s_roi + (1.0 - s_look)) / 2.0);
    }
    Ok((s_roi + w * (1.0 - s_look)) / (1.0 + w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAgent {
    pub track_id: i64,
    #[serde(flatten)]
    pub risk: JointRisk,
}

/// Agents sorted by descending joint risk, ties to the lowest track id.
///
/// `looks` must cover exactly the scored tracks; pass [`NEUTRAL_LOOK`] for
/// agents that are not pedestrians.
pub fn rank_agents(
    intervention: &InterventionResult,
    looks: &BTreeMap<i64, f64>,
    weight: f64,
) -> Result<Vec<RankedAgent>> {
    if !intervention.scores.keys().eq(looks.keys()) {
        return Err(Error::InvalidInput(format!(
            "attention scores cover tracks {:?} but the intervention scored {:?}",
            looks.keys().collect::<Vec<_>>(),
            intervention.scores.keys().collect::<Vec<_>>()
        )));
    }
    let mut ranked = intervention
        .scores
        .iter()
        .map(|(&id, &s_roi)| {
            let s_look = looks[&id];
            Ok(RankedAgent {
                track_id: id,
                risk: JointRisk { s_roi, s_look, s_risk: weighted_joint_risk(s_roi, s_look, weight)? },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.risk.s_risk.total_cmp(&a.risk.s_risk).then(a.track_id.cmp(&b.track_id)));
    Ok(ranked)
}
