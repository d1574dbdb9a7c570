//! Driver-action anticipation with a recurrent encoder-decoder.
//!
//! At each encoder step the frame descriptor `x_t` (the ego node feature) is
//! concatenated with the current future-feature estimate `x̂` and fed to the
//! encoder cell. The encoder classifier turns `h_e` into `p_act`. A decoder
//! seeded with the fresh encoder state then rolls forward `p_d` steps:
//!
//! ```text
//! (h_d, c_d) = cell(f_d, h_d, c_d)
//! s_d        = score(h_d)
//! f_d        = feedback(s_d)
//! x̂         += relu(future(h_d))
//! ```
//!
//! and `x̂ / p_d` becomes the estimate used by the next encoder step. The
//! first encoder step sees `x̂ = 0`.
//!
//! Decoder step `k` of encoder step `t` predicts the label of frame `t + k`.
//! Targets past the last frame are dropped from the loss.

use std::fmt::Write as _;

use rand::Rng;
use riskid_tape::{softmax, Mat, Tape, Var};

use crate::cells::{cells, CellParams, CellVars, RecurrentCell};
use crate::error::{Error, Result};
use crate::params::{Bound, Linear, LinearVars, Parameterized};
use crate::types::{DriverAction, Episode, Frame};

/// Number of action classes.
pub const ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPredictorParams {
    /// Registered name of the recurrent cell.
    pub cell: String,
    /// Input is `[x, x̂]`, width `2D`.
    pub encoder: CellParams,
    /// Input is the feedback vector `f_d`, width 3.
    pub decoder: CellParams,
    /// `H -> 3`, produces `s_e`.
    pub encoder_head: Linear,
    /// `H -> 3`, produces `s_d`.
    pub decoder_score: Linear,
    /// `3 -> 3`, maps `s_d` to the next decoder input.
    pub decoder_feedback: Linear,
    /// `H -> D`, the future-feature head.
    pub future_head: Linear,
    pub p_e: usize,
    pub p_d: usize,
}

impl ActionPredictorParams {
    pub fn init<R: Rng>(
        rng: &mut R,
        cell: &str,
        d: usize,
        hidden: usize,
        p_e: usize,
        p_d: usize,
    ) -> Result<Self> {
        let gates = cells().get(cell)?.gate_count();
        let p = Self {
            cell: cell.to_string(),
            encoder: CellParams::init(rng, 2 * d, hidden, gates),
            decoder: CellParams::init(rng, ACTIONS, hidden, gates),
            encoder_head: Linear::init(rng, hidden, ACTIONS),
            decoder_score: Linear::init(rng, hidden, ACTIONS),
            decoder_feedback: Linear::init(rng, ACTIONS, ACTIONS),
            future_head: Linear::init(rng, hidden, d),
            p_e,
            p_d,
        };
        p.check(d)?;
        Ok(p)
    }

    pub fn zeros(cell: &str, d: usize, hidden: usize, p_e: usize, p_d: usize) -> Result<Self> {
        let gates = cells().get(cell)?.gate_count();
        let p = Self {
            cell: cell.to_string(),
            encoder: CellParams::zeros(2 * d, hidden, gates),
            decoder: CellParams::zeros(ACTIONS, hidden, gates),
            encoder_head: Linear::zeros(hidden, ACTIONS),
            decoder_score: Linear::zeros(hidden, ACTIONS),
            decoder_feedback: Linear::zeros(ACTIONS, ACTIONS),
            future_head: Linear::zeros(hidden, d),
            p_e,
            p_d,
        };
        p.check(d)?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn dim(&self) -> usize {
        self.future_head.output_dim()
    }

    pub fn cell_impl(&self) -> Result<&'static dyn RecurrentCell> {
        cells().get(&self.cell)
    }

    /// Verifies horizons and every tensor shape against feature dimension `d`.
    pub fn check(&self, d: usize) -> Result<()> {
        if self.p_e == 0 {
            return Err(Error::Config("encoder horizon p_e must be at least 1".into()));
        }
        if self.p_d == 0 {
            return Err(Error::Config("decoder horizon p_d must be at least 1".into()));
        }
        let gh = self.cell_impl()?.gate_count() * self.hidden();
        let h = self.hidden();
        let shapes = [
            ("action.encoder.w_x", (2 * d, gh)),
            ("action.encoder.w_h", (h, gh)),
            ("action.encoder.bias", (1, gh)),
            ("action.decoder.w_x", (ACTIONS, gh)),
            ("action.decoder.w_h", (h, gh)),
            ("action.decoder.bias", (1, gh)),
            ("action.encoder_head.weight", (h, ACTIONS)),
            ("action.encoder_head.bias", (1, ACTIONS)),
            ("action.decoder_score.weight", (h, ACTIONS)),
            ("action.decoder_score.bias", (1, ACTIONS)),
            ("action.decoder_feedback.weight", (ACTIONS, ACTIONS)),
            ("action.decoder_feedback.bias", (1, ACTIONS)),
            ("action.future_head.weight", (h, d)),
            ("action.future_head.bias", (1, d)),
        ];
        let mut k = 0;
        let mut result = Ok(());
        self.visit(&mut |name, m| {
            let (want_name, want) = shapes[k];
            debug_assert_eq!(name, want_name);
            if result.is_ok() && m.dim() != want {
                result = Err(Error::Shape { name: name.to_string(), expected: want, found: m.dim() });
            }
            k += 1;
        });
        result
    }

    pub fn bind(&self, tape: &mut Tape) -> ActionVars {
        ActionVars {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
            encoder_head: self.encoder_head.bind(tape),
            decoder_score: self.decoder_score.bind(tape),
            decoder_feedback: self.decoder_feedback.bind(tape),
            future_head: self.future_head.bind(tape),
        }
    }
}

impl Parameterized for ActionPredictorParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Mat)) {
        self.encoder.visit_named("action.encoder", f);
        self.decoder.visit_named("action.decoder", f);
        self.encoder_head.visit_named("action.encoder_head", f);
        self.decoder_score.visit_named("action.decoder_score", f);
        self.decoder_feedback.visit_named("action.decoder_feedback", f);
        self.future_head.visit_named("action.future_head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.encoder.visit_named_mut("action.encoder", f);
        self.decoder.visit_named_mut("action.decoder", f);
        self.encoder_head.visit_named_mut("action.encoder_head", f);
        self.decoder_score.visit_named_mut("action.decoder_score", f);
        self.decoder_feedback.visit_named_mut("action.decoder_feedback", f);
        self.future_head.visit_named_mut("action.future_head", f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActionVars {
    pub encoder: CellVars,
    pub decoder: CellVars,
    pub encoder_head: LinearVars,
    pub decoder_score: LinearVars,
    pub decoder_feedback: LinearVars,
    pub future_head: LinearVars,
}

impl Bound for ActionVars {
    fn vars(&self, out: &mut Vec<Var>) {
        self.encoder.vars(out);
        self.decoder.vars(out);
        self.encoder_head.vars(out);
        self.decoder_score.vars(out);
        self.decoder_feedback.vars(out);
        self.future_head.vars(out);
    }
}

/// Everything the encoder-decoder exposes at one encoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPredictorState {
    pub h_e: Vec<f64>,
    pub c_e: Vec<f64>,
    pub h_d: Vec<f64>,
    pub c_d: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub s_e: Vec<f64>,
    pub s_d: Vec<f64>,
    pub f_d: Vec<f64>,
    pub p_act: Vec<f64>,
    pub p_int: Vec<f64>,
}

/// Global descriptor of a frame: the ego node's feature.
pub fn frame_feature(frame: &Frame) -> Vec<f64> {
    frame.ego().feature.clone()
}

/// One encoder step on the tape; returns `(h_e', c_e', s_e')`.
pub fn encode_step_on_tape(
    tape: &mut Tape,
    cell: &dyn RecurrentCell,
    vars: &ActionVars,
    x: Var,
    x_hat: Var,
    h_e: Var,
    c_e: Var,
) -> (Var, Var, Var) {
    let input = tape.concat_cols(x, x_hat);
    let (h, c) = cell.step(tape, &vars.encoder, input, h_e, c_e);
    let s = vars.encoder_head.forward(tape, h);
    (h, c, s)
}

/// Decoder rollout on the tape; returns `x̂` and the `p_d` score logits.
pub fn decoder_rollout_on_tape(
    tape: &mut Tape,
    cell: &dyn RecurrentCell,
    vars: &ActionVars,
    p_d: usize,
    h_e: Var,
    c_e: Var,
) -> (Var, Vec<Var>) {
    let d = tape.shape(vars.future_head.bias).1;
    let mut f = tape.zeros(1, ACTIONS);
    let (mut h, mut c) = (h_e, c_e);
    let mut acc = tape.zeros(1, d);
    let mut scores = Vec::with_capacity(p_d);
    for _ in 0..p_d {
        (h, c) = cell.step(tape, &vars.decoder, f, h, c);
        let s = vars.decoder_score.forward(tape, h);
        f = vars.decoder_feedback.forward(tape, s);
        let future = vars.future_head.forward(tape, h);
        let future = tape.relu(future);
        acc = tape.add(acc, future);
        scores.push(s);
    }
    let x_hat = tape.scale(acc, 1.0 / p_d as f64);
    (x_hat, scores)
}

/// Encoder output for one step, with the decoder logits it spawned.
#[derive(Debug, Clone)]
pub struct ActionStepVars {
    /// 1-based frame index of the encoder input.
    pub frame: usize,
    pub encoder_logits: Var,
    pub h_e: Var,
    pub decoder_logits: Vec<Var>,
}

/// Runs the encoder-decoder over the last `min(p_e, Z)` frames.
///
/// `frames` holds the `1 x D` frame descriptors of the whole episode.
pub fn action_trace_on_tape(
    tape: &mut Tape,
    params: &ActionPredictorParams,
    vars: &ActionVars,
    frames: &[Var],
) -> Result<Vec<ActionStepVars>> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("episode has no frames".into()));
    }
    let cell = params.cell_impl()?;
    let z = frames.len();
    let start = z - params.p_e.min(z);
    let hidden = params.hidden();
    let mut h = tape.zeros(1, hidden);
    let mut c = tape.zeros(1, hidden);
    let mut x_hat = tape.zeros(1, params.dim());
    let mut steps = Vec::with_capacity(z - start);
    for (t, &x) in frames.iter().enumerate().skip(start) {
        let (h_next, c_next, s) = encode_step_on_tape(tape, cell, vars, x, x_hat, h, c);
        (h, c) = (h_next, c_next);
        let (estimate, decoder_logits) = decoder_rollout_on_tape(tape, cell, vars, params.p_d, h, c);
        x_hat = estimate;
        steps.push(ActionStepVars { frame: t + 1, encoder_logits: s, h_e: h, decoder_logits });
    }
    Ok(steps)
}

/// Ego descriptors of every frame as tape leaves.
pub fn frame_inputs(tape: &mut Tape, episode: &Episode) -> Vec<Var> {
    episode.frames.iter().map(|f| tape.row(&frame_feature(f))).collect()
}

/// Summed cross entropy of encoder and in-range decoder predictions.
pub fn action_loss_on_tape(
    tape: &mut Tape,
    steps: &[ActionStepVars],
    labels: &[DriverAction],
) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::InvalidInput("action loss over an empty sequence".into()));
    }
    let mut total: Option<Var> = None;
    let mut push = |tape: &mut Tape, term: Var| {
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    };
    for step in steps {
        let label = label_at(labels, step.frame)?;
        let term = tape.softmax_cross_entropy(step.encoder_logits, label.index());
        push(tape, term);
        for (k, logits) in step.decoder_logits.iter().enumerate() {
            let target = step.frame + k + 1;
            if target > labels.len() {
                break;
            }
            let term = tape.softmax_cross_entropy(*logits, labels[target - 1].index());
            push(tape, term);
        }
    }
    Ok(total.expect("at least one step"))
}

fn label_at(labels: &[DriverAction], frame: usize) -> Result<DriverAction> {
    labels.get(frame.wrapping_sub(1)).copied().ok_or_else(|| {
        Error::InvalidInput(format!("no action label for frame {frame} ({} labels)", labels.len()))
    })
}

fn check_len(name: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(Error::Shape { name: name.into(), expected: (1, want), found: (1, v.len()) });
    }
    Ok(())
}

fn row_vec(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).iter().copied().collect()
}

/// One encoder step; returns `(h_e', c_e', s_e')`.
pub fn encode_step(
    x_t: &[f64],
    x_hat_t: &[f64],
    h_e: &[f64],
    c_e: &[f64],
    params: &ActionPredictorParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (d, h) = (params.dim(), params.hidden());
    check_len("x", x_t, d)?;
    check_len("x_hat", x_hat_t, d)?;
    check_len("h_e", h_e, h)?;
    check_len("c_e", c_e, h)?;
    let cell = params.cell_impl()?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let (x, xh, hv, cv) = (tape.row(x_t), tape.row(x_hat_t), tape.row(h_e), tape.row(c_e));
    let (h2, c2, s) = encode_step_on_tape(&mut tape, cell, &vars, x, xh, hv, cv);
    Ok((row_vec(&tape, h2), row_vec(&tape, c2), row_vec(&tape, s)))
}

/// Decoder rollout from an encoder state; returns `x̂` and the `p_d`
/// score logits.
pub fn decoder_rollout(
    h_e: &[f64],
    c_e: &[f64],
    params: &ActionPredictorParams,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if params.p_d == 0 {
        return Err(Error::Config("decoder horizon p_d must be at least 1".into()));
    }
    let h = params.hidden();
    check_len("h_e", h_e, h)?;
    check_len("c_e", c_e, h)?;
    let cell = params.cell_impl()?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let (hv, cv) = (tape.row(h_e), tape.row(c_e));
    let (x_hat, scores) = decoder_rollout_on_tape(&mut tape, cell, &vars, params.p_d, hv, cv);
    Ok((row_vec(&tape, x_hat), scores.iter().map(|s| row_vec(&tape, *s)).collect()))
}

/// Per-step action predictions of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrediction {
    /// 1-based frame index of each encoder step.
    pub frames: Vec<usize>,
    pub p_act: Vec<Vec<f64>>,
    pub h_e: Vec<Vec<f64>>,
    /// Softmaxed decoder scores, `p_d` per encoder step.
    pub future: Vec<Vec<Vec<f64>>>,
}

impl ActionPrediction {
    /// CSV with columns `frame,p_left,p_right,p_straight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,p_left,p_right,p_straight\n");
        for (frame, p) in self.frames.iter().zip(&self.p_act) {
            let _ = writeln!(out, "{frame},{},{},{}", p[0], p[1], p[2]);
        }
        out
    }
}

pub fn predict_action(episode: &Episode, params: &ActionPredictorParams) -> Result<ActionPrediction> {
    params.check(episode.d())?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let xs = frame_inputs(&mut tape, episode);
    let steps = action_trace_on_tape(&mut tape, params, &vars, &xs)?;
    let probs = |v: Var| softmax(&row_vec(&tape, v));
    Ok(ActionPrediction {
        frames: steps.iter().map(|s| s.frame).collect(),
        p_act: steps.iter().map(|s| probs(s.encoder_logits)).collect(),
        h_e: steps.iter().map(|s| row_vec(&tape, s.h_e)).collect(),
        future: steps.iter().map(|s| s.decoder_logits.iter().map(|v| probs(*v)).collect()).collect(),
    })
}

/// Action loss from predicted distributions.
///
/// `prediction.p_act[k]` is scored against the label of
/// `prediction.frames[k]`; the `i`-th decoder distribution of that step
/// against the label `i + 1` frames later, when such a frame exists.
pub fn action_loss(prediction: &ActionPrediction, labels: &[DriverAction]) -> Result<f64> {
    if prediction.frames.is_empty() {
        return Err(Error::InvalidInput("action loss over an empty sequence".into()));
    }
    let ce = |p: &[f64], label: DriverAction| -p[label.index()].max(f64::MIN_POSITIVE).ln();
    let mut gamma = 0.0;
    for (k, &frame) in prediction.frames.iter().enumerate() {
        gamma += ce(&prediction.p_act[k], label_at(labels, frame)?);
        for (i, p) in prediction.future[k].iter().enumerate() {
            match labels.get(frame + i) {
                Some(label) => gamma += ce(p, *label),
                None => break,
            }
        }
    }
    Ok(gamma)
}
