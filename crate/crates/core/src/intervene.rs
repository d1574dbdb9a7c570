//! Driver-response prediction and the masking intervention that finds the
//! risk object.
//!
//! The response classifier reads the relational feature `g`, optionally
//! concatenated with the action encoder's hidden state at the last frame.
//! To identify the risk object every non-ego agent present in the last frame
//! is removed from the whole clip in turn (presence cleared, features
//! zeroed) and the response is re-predicted. The agent whose removal gives the
//! highest `Continue` confidence is the risk object.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use riskid_tape::{softmax, Mat, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::actionnet::{action_trace_on_tape, frame_inputs, ActionPredictorParams, ActionVars};
use crate::error::{Error, Result};
use crate::graphnet::{graph_inputs, relational_feature_on_tape, RelationParams, RelationVars};
use crate::params::{Bound, Linear, LinearVars, Parameterized};
use crate::registry::Registry;
use crate::types::{BoundingBox, DriverResponse, Episode, EGO_ID};

/// Architecture hyperparameters of a [`RiskModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature dimension `D`.
    pub d: usize,
    pub gcn_layers: usize,
    /// Hidden width of the response classifier.
    pub head_hidden: usize,
    /// Whether the action encoder-decoder feeds the response classifier.
    pub use_action: bool,
    pub cell: String,
    /// Recurrent hidden size `H`.
    pub hidden: usize,
    pub p_e: usize,
    pub p_d: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            gcn_layers: 2,
            head_hidden: 64,
            use_action: true,
            cell: "lstm".into(),
            hidden: 64,
            p_e: 3,
            p_d: 3,
        }
    }
}

/// Two-layer classifier from `[g, h_e]` to `(Continue, Alter)` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl ResponseHead {
    pub fn init<R: Rng>(rng: &mut R, input: usize, width: usize) -> Self {
        Self { hidden: Linear::init(rng, input, width), output: Linear::init(rng, width, 2) }
    }

    pub fn zeros(input: usize, width: usize) -> Self {
        Self { hidden: Linear::zeros(input, width), output: Linear::zeros(width, 2) }
    }

    pub fn bind(&self, tape: &mut Tape) -> ResponseHeadVars {
        ResponseHeadVars { hidden: self.hidden.bind(tape), output: self.output.bind(tape) }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResponseHeadVars {
    pub hidden: LinearVars,
    pub output: LinearVars,
}

impl ResponseHeadVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.relu(h);
        self.output.forward(tape, h)
    }
}

/// Graph reasoning, optional action branch and response classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    pub graph: RelationParams,
    pub action: Option<ActionPredictorParams>,
    pub head: ResponseHead,
}

impl RiskModel {
    pub fn init<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let graph = RelationParams::init(rng, cfg.d, cfg.gcn_layers);
        let action = if cfg.use_action {
            Some(ActionPredictorParams::init(rng, &cfg.cell, cfg.d, cfg.hidden, cfg.p_e, cfg.p_d)?)
        } else {
            None
        };
        let head = ResponseHead::init(rng, head_input(cfg), cfg.head_hidden);
        Ok(Self { graph, action, head })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let action = if cfg.use_action {
            Some(ActionPredictorParams::zeros(&cfg.cell, cfg.d, cfg.hidden, cfg.p_e, cfg.p_d)?)
        } else {
            None
        };
        Ok(Self {
            graph: RelationParams::zeros(cfg.d, cfg.gcn_layers),
            action,
            head: ResponseHead::zeros(head_input(cfg), cfg.head_hidden),
        })
    }

    pub fn dim(&self) -> usize {
        self.graph.dim()
    }

    /// Verifies all tensors against feature dimension `d`.
    pub fn check(&self, d: usize) -> Result<()> {
        self.graph.check(d)?;
        let mut input = d;
        if let Some(a) = &self.action {
            a.check(d)?;
            input += a.hidden();
        }
        if self.head.hidden.input_dim() != input {
            return Err(Error::Shape {
                name: "head.hidden.weight".into(),
                expected: (input, self.head.hidden.output_dim()),
                found: self.head.hidden.weight.dim(),
            });
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            graph: self.graph.bind(tape),
            action: self.action.as_ref().map(|a| a.bind(tape)),
            head: self.head.bind(tape),
        }
    }
}

fn head_input(cfg: &ModelConfig) -> usize {
    cfg.d + if cfg.use_action { cfg.hidden } else { 0 }
}

impl Parameterized for RiskModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Mat)) {
        self.graph.visit(f);
        if let Some(a) = &self.action {
            a.visit(f);
        }
        self.head.hidden.visit_named("head.hidden", f);
        self.head.output.visit_named("head.output", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.graph.visit_mut(f);
        if let Some(a) = &mut self.action {
            a.visit_mut(f);
        }
        self.head.hidden.visit_named_mut("head.hidden", f);
        self.head.output.visit_named_mut("head.output", f);
    }
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub graph: RelationVars,
    pub action: Option<ActionVars>,
    pub head: ResponseHeadVars,
}

impl Bound for ModelVars {
    fn vars(&self, out: &mut Vec<Var>) {
        self.graph.vars(out);
        if let Some(a) = &self.action {
            a.vars(out);
        }
        self.head.hidden.vars(out);
        self.head.output.vars(out);
    }
}

/// Tape handles produced by one forward pass over an episode.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `1 x 2` response logits.
    pub logits: Var,
    /// Action steps, present when the model has an action branch.
    pub action: Vec<crate::actionnet::ActionStepVars>,
}

/// Full forward pass recorded on the tape.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &RiskModel,
    vars: &ModelVars,
    episode: &Episode,
) -> Result<Forward> {
    let inputs = graph_inputs(tape, episode);
    let g = relational_feature_on_tape(tape, &inputs, &vars.graph)?;
    let (features, action) = match (&model.action, &vars.action) {
        (Some(params), Some(avars)) => {
            let xs = frame_inputs(tape, episode);
            let steps = action_trace_on_tape(tape, params, avars, &xs)?;
            let h_last = steps.last().expect("at least one encoder step").h_e;
            (tape.concat_cols(g, h_last), steps)
        }
        _ => (g, Vec::new()),
    };
    let logits = vars.head.forward(tape, features);
    Ok(Forward { logits, action })
}

/// Response logits `(Continue, Alter)`.
pub fn response_logits(episode: &Episode, model: &RiskModel) -> Result<[f64; 2]> {
    model.check(episode.d())?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let fwd = forward_on_tape(&mut tape, model, &vars, episode)?;
    let v = tape.value(fwd.logits);
    Ok([v[[0, 0]], v[[0, 1]]])
}

/// Response probabilities `(p_continue, p_alter)`.
pub fn predict_response(episode: &Episode, model: &RiskModel) -> Result<(f64, f64)> {
    let p = softmax(&response_logits(episode, model)?);
    Ok((p[0], p[1]))
}

/// Mean two-class cross entropy of `(p_continue, p_alter)` predictions.
pub fn response_loss(predictions: &[(f64, f64)], labels: &[DriverResponse]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&(c, a), label)| {
            let p = match label {
                DriverResponse::Continue => c,
                DriverResponse::Alter => a,
            };
            -p.max(f64::MIN_POSITIVE).ln()
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Copy of `episode` with `track_id` absent and zeroed in every frame.
pub fn mask_agent(episode: &Episode, track_id: i64) -> Result<Episode> {
    if track_id == EGO_ID {
        return Err(Error::InvalidInput("the ego vehicle cannot be masked".into()));
    }
    let mut out = episode.clone();
    let mut found = false;
    for frame in &mut out.frames {
        for node in frame.nodes.iter_mut().filter(|n| n.track_id == track_id) {
            found = true;
            node.present = false;
            node.feature.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    if !found {
        return Err(Error::InvalidInput(format!("track {track_id} does not occur in the episode")));
    }
    Ok(out)
}

/// Outcome of the masking intervention on one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    #[serde(default)]
    pub episode: Option<usize>,
    /// Unmasked `(p_continue, p_alter)`.
    pub baseline: [f64; 2],
    /// `Continue` confidence with each candidate masked.
    pub scores: BTreeMap<i64, f64>,
    pub chosen: i64,
    #[serde(rename = "box")]
    pub chosen_box: BoundingBox,
}

/// Masks each candidate in turn and picks the highest `Continue` confidence.
pub fn identify_risk_object(episode: &Episode, model: &RiskModel) -> Result<InterventionResult> {
    let candidates = episode.candidates();
    if candidates.is_empty() {
        return Err(Error::Degenerate("no candidate agents".into()));
    }
    let (pc, pa) = predict_response(episode, model)?;
    let mut scores = BTreeMap::new();
    for &id in &candidates {
        let (c, _) = predict_response(&mask_agent(episode, id)?, model)?;
        scores.insert(id, c);
    }
    let chosen = argmax_lowest_id(&scores).expect("nonempty scores");
    Ok(InterventionResult {
        episode: None,
        baseline: [pc, pa],
        scores,
        chosen,
        chosen_box: box_at_last_frame(episode, chosen)?,
    })
}

/// Key of the largest value; ties go to the smallest key.
pub fn argmax_lowest_id(scores: &BTreeMap<i64, f64>) -> Option<i64> {
    let mut best: Option<(i64, f64)> = None;
    for (&id, &s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id)
}

fn box_at_last_frame(episode: &Episode, id: i64) -> Result<BoundingBox> {
    episode
        .final_frame()
        .node(id)
        .map(|n| n.bbox)
        .ok_or_else(|| Error::InvalidInput(format!("track {id} is not in the last frame")))
}

/// A rule for choosing the risk object of an episode.
pub trait RiskSelector: Send + Sync {
    fn name(&self) -> &'static str;
    fn choose(&self, episode: &Episode, model: &RiskModel, rng: &mut dyn RngCore) -> Result<i64>;
}

/// Picks the agent whose removal restores the most `Continue` confidence.
pub struct InterventionSelector;

impl RiskSelector for InterventionSelector {
    fn name(&self) -> &'static str {
        "intervention"
    }

    fn choose(&self, episode: &Episode, model: &RiskModel, _rng: &mut dyn RngCore) -> Result<i64> {
        Ok(identify_risk_object(episode, model)?.chosen)
    }
}

/// Picks a candidate uniformly at random, ignoring the model.
pub struct RandomSelector;

impl RiskSelector for RandomSelector {
    fn name(&self) -> &'static str {
        "random"
    }

    fn choose(&self, episode: &Episode, _model: &RiskModel, rng: &mut dyn RngCore) -> Result<i64> {
        let candidates = episode.candidates();
        if candidates.is_empty() {
            return Err(Error::Degenerate("no candidate agents".into()));
        }
        Ok(candidates[rng.random_range(0..candidates.len())])
    }
}

pub fn selectors() -> &'static Registry<dyn RiskSelector> {
    static REGISTRY: std::sync::OnceLock<Registry<dyn RiskSelector>> = std::sync::OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn RiskSelector> = Registry::new("risk selector");
        r.register("intervention", Box::new(InterventionSelector));
        r.register("random", Box::new(RandomSelector));
        r
    })
}
