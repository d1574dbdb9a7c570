//! Pedestrian attentiveness.
//!
//! Two pieces live here. The first is the multi-task loss of a face detector
//! head that also predicts whether each detected face looks at the ego
//! vehicle:
//!
//! ```text
//! L_p = L_cls + L_box + alpha * L_attn
//! ```
//!
//! with anchors matched to ground-truth faces by IoU. The second is a small
//! classifier on face-pose features whose `Looking` probability is the
//! `s_look` consumed by risk fusion.

use std::fmt::Write as _;

use rand::Rng;
use riskid_tape::{sigmoid, smooth_l1, softmax, Mat, Tape, Var, PROB_EPS};

use crate::error::{Error, Result};
use crate::params::{Linear, LinearVars, Parameterized};
use crate::types::{iou, AgentClass, AttentionState, BoundingBox, Episode};

/// One detector anchor with its predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub bbox: BoundingBox,
    /// Objectness probability `p_i`.
    pub objectness: f64,
    /// Box regression `t_i` as `(dx, dy, dw, dh)`.
    pub regression: [f64; 4],
    /// Predicted `Looking` probability `a_i`.
    pub attn: f64,
}

/// A ground-truth face.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnGroundTruth {
    pub face_box: BoundingBox,
    pub is_face: bool,
    /// `Some(true)` for `Looking`; `None` when the gaze is not labelled.
    pub looking: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnLossConfig {
    /// Weight of the attention term.
    pub alpha: f64,
    /// IoU at or above which an anchor is positive.
    pub lambda_iou: f64,
}

impl Default for AttnLossConfig {
    fn default() -> Self {
        Self { alpha: 0.25, lambda_iou: 0.5 }
    }
}

impl AttnLossConfig {
    pub fn new(alpha: f64, lambda_iou: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if !(lambda_iou > 0.0 && lambda_iou < 1.0) {
            return Err(Error::Config(format!("lambda_iou must lie in (0, 1), got {lambda_iou}")));
        }
        Ok(Self { alpha, lambda_iou })
    }
}

/// Loss value and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnLoss {
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
    pub attn: f64,
}

/// Ground-truth index of every positive anchor.
///
/// An anchor is positive when its best IoU reaches `lambda_iou`; the best
/// ground truth wins, the lowest index on ties.
pub fn match_anchors(anchors: &[BoundingBox], gts: &[BoundingBox], lambda_iou: f64) -> Vec<Option<usize>> {
    anchors
        .iter()
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for (k, g) in gts.iter().enumerate() {
                let v = iou(a, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            best.filter(|(_, v)| *v >= lambda_iou).map(|(k, _)| k)
        })
        .collect()
}

/// Regression target of `gt` relative to `anchor`.
pub fn encode_box(anchor: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [(gx - ax) / aw, (gy - ay) / ah, (gt.width() / aw).ln(), (gt.height() / ah).ln()]
}

fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn check_assignment(n: usize, assignment: &[Option<usize>], gts: usize) -> Result<()> {
    if assignment.len() != n {
        return Err(Error::InvalidInput(format!("{} assignments for {n} anchors", assignment.len())));
    }
    if let Some(k) = assignment.iter().flatten().find(|k| **k >= gts) {
        return Err(Error::InvalidInput(format!("assignment to missing ground truth {k}")));
    }
    Ok(())
}

/// Objectness target of an anchor under `assignment`.
fn objectness_target(a: Option<usize>, gts: &[AttnGroundTruth]) -> f64 {
    match a {
        Some(k) if gts[k].is_face => 1.0,
        _ => 0.0,
    }
}

/// Multi-task detector loss.
///
/// `L_cls` is the mean binary cross entropy of objectness over all anchors,
/// `L_box` the mean (over positives) smooth-L1 of the regression against the
/// encoded ground truth, and `L_attn` the mean binary cross entropy of the
/// attention prediction over positives whose face carries a gaze label. Empty
/// averages are zero.
pub fn attention_loss(
    anchors: &[Anchor],
    assignment: &[Option<usize>],
    gts: &[AttnGroundTruth],
    cfg: &AttnLossConfig,
) -> Result<AttnLoss> {
    check_assignment(anchors.len(), assignment, gts.len())?;
    if anchors.is_empty() {
        return Err(Error::InvalidInput("no anchors".into()));
    }
    let cls = anchors
        .iter()
        .zip(assignment)
        .map(|(a, m)| bce(a.objectness, objectness_target(*m, gts)))
        .sum::<f64>()
        / anchors.len() as f64;
    let (mut bbox, mut n_pos, mut attn, mut n_attn) = (0.0, 0, 0.0, 0);
    for (a, m) in anchors.iter().zip(assignment) {
        let Some(k) = m else { continue };
        let target = encode_box(&a.bbox, &gts[*k].face_box);
        bbox += a.regression.iter().zip(target).map(|(t, g)| smooth_l1(t - g)).sum::<f64>();
        n_pos += 1;
        if let Some(look) = gts[*k].looking {
            attn += bce(a.attn, if look { 1.0 } else { 0.0 });
            n_attn += 1;
        }
    }
    let bbox = if n_pos > 0 { bbox / n_pos as f64 } else { 0.0 };
    let attn = if n_attn > 0 { attn / n_attn as f64 } else { 0.0 };
    Ok(AttnLoss { total: cls + bbox + cfg.alpha * attn, cls, bbox, attn })
}

/// Linear detector head: anchor descriptor to objectness, regression and
/// attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorHead {
    /// `k -> 6`: objectness logit, 4 regression values, attention logit.
    pub linear: Linear,
}

impl AnchorHead {
    pub fn init<R: Rng>(rng: &mut R, input: usize) -> Self {
        Self { linear: Linear::init(rng, input, 6) }
    }

    pub fn predict(&self, bbox: BoundingBox, descriptor: &[f64]) -> Result<Anchor> {
        if descriptor.len() != self.linear.input_dim() {
            return Err(Error::InvalidInput(format!(
                "anchor descriptor has {} values, expected {}",
                descriptor.len(),
                self.linear.input_dim()
            )));
        }
        let out: Vec<f64> = (0..6)
            .map(|c| {
                descriptor.iter().enumerate().map(|(r, x)| x * self.linear.weight[[r, c]]).sum::<f64>()
                    + self.linear.bias[[0, c]]
            })
            .collect();
        Ok(Anchor {
            bbox,
            objectness: sigmoid(out[0]),
            regression: [out[1], out[2], out[3], out[4]],
            attn: sigmoid(out[5]),
        })
    }
}

impl Parameterized for AnchorHead {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Mat)) {
        self.linear.visit_named("attention.anchor", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.linear.visit_named_mut("attention.anchor", f);
    }
}

/// The detector loss recorded on the tape, as a function of the head.
///
/// `descriptors` is `anchors x k`; the value equals [`attention_loss`] of the
/// anchors [`AnchorHead::predict`] would produce.
pub fn attention_loss_on_tape(
    tape: &mut Tape,
    head: LinearVars,
    descriptors: Var,
    boxes: &[BoundingBox],
    assignment: &[Option<usize>],
    gts: &[AttnGroundTruth],
    cfg: &AttnLossConfig,
) -> Result<Var> {
    let n = boxes.len();
    check_assignment(n, assignment, gts.len())?;
    if n == 0 || tape.shape(descriptors).0 != n {
        return Err(Error::InvalidInput("descriptor rows must match a nonempty anchor set".into()));
    }
    let out = head.forward(tape, descriptors);
    let obj_logit = tape.slice_cols(out, 0, 1);
    let obj = tape.sigmoid(obj_logit);
    let targets = Mat::from_shape_fn((n, 1), |(i, _)| objectness_target(assignment[i], gts));
    let cls = tape.binary_cross_entropy(obj, targets);
    let mut total = tape.scale(cls, 1.0 / n as f64);

    let positives: Vec<(usize, usize)> =
        assignment.iter().enumerate().filter_map(|(i, m)| m.map(|k| (i, k))).collect();
    if !positives.is_empty() {
        let pick = Mat::from_shape_fn((positives.len(), n), |(r, c)| if positives[r].0 == c { 1.0 } else { 0.0 });
        let pick = tape.leaf(pick);
        let pos = tape.matmul(pick, out);
        let reg = tape.slice_cols(pos, 1, 5);
        let reg_targets = Mat::from_shape_fn((positives.len(), 4), |(r, c)| {
            let (i, k) = positives[r];
            encode_box(&boxes[i], &gts[k].face_box)[c]
        });
        let l_box = tape.smooth_l1(reg, reg_targets);
        let l_box = tape.scale(l_box, 1.0 / positives.len() as f64);
        total = tape.add(total, l_box);

        let labelled: Vec<(usize, f64)> = positives
            .iter()
            .enumerate()
            .filter_map(|(r, (_, k))| gts[*k].looking.map(|l| (r, if l { 1.0 } else { 0.0 })))
            .collect();
        if !labelled.is_empty() && cfg.alpha != 0.0 {
            let sel = Mat::from_shape_fn((labelled.len(), positives.len()), |(r, c)| {
                if labelled[r].0 == c {
                    1.0
                } else {
                    0.0
                }
            });
            let sel = tape.leaf(sel);
            let rows = tape.matmul(sel, pos);
            let attn_logit = tape.slice_cols(rows, 5, 6);
            let attn = tape.sigmoid(attn_logit);
            let t = Mat::from_shape_fn((labelled.len(), 1), |(r, _)| labelled[r].1);
            let l_attn = tape.binary_cross_entropy(attn, t);
            let l_attn = tape.scale(l_attn, cfg.alpha / labelled.len() as f64);
            total = tape.add(total, l_attn);
        }
    }
    Ok(total)
}

/// Two-way `(Looking, NotLooking)` softmax classifier on face features.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionClassifier {
    pub linear: Linear,
}

impl AttentionClassifier {
    pub fn zeros(input: usize) -> Self {
        Self { linear: Linear::zeros(input, 2) }
    }

    pub fn init<R: Rng>(rng: &mut R, input: usize) -> Self {
        Self { linear: Linear::init(rng, input, 2) }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        self.linear.bind(tape)
    }
}

impl Parameterized for AttentionClassifier {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Mat)) {
        self.linear.visit_named("attention.classifier", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.linear.visit_named_mut("attention.classifier", f);
    }
}

/// `(p_looking, p_not_looking)` for one face feature.
pub fn classify_attention(feature: &[f64], clf: &AttentionClassifier) -> Result<(f64, f64)> {
    if feature.len() != clf.input_dim() {
        return Err(Error::InvalidInput(format!(
            "face feature has {} values, expected {}",
            feature.len(),
            clf.input_dim()
        )));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite face feature".into()));
    }
    let logits: Vec<f64> = (0..2)
        .map(|c| {
            feature.iter().enumerate().map(|(r, x)| x * clf.linear.weight[[r, c]]).sum::<f64>()
                + clf.linear.bias[[0, c]]
        })
        .collect();
    let p = softmax(&logits);
    Ok((p[0], p[1]))
}

/// Classifier cross entropy on the tape for one labelled feature.
pub fn classifier_loss_on_tape(tape: &mut Tape, vars: LinearVars, feature: &[f64], looking: bool) -> Var {
    let x = tape.row(feature);
    let logits = vars.forward(tape, x);
    tape.softmax_cross_entropy(logits, if looking { 0 } else { 1 })
}

/// `s_look` of a pedestrian at the last frame.
pub fn looking_score(episode: &Episode, track_id: i64, clf: &AttentionClassifier) -> Result<f64> {
    let node = episode
        .final_frame()
        .node(track_id)
        .ok_or_else(|| Error::InvalidInput(format!("track {track_id} is not in the last frame")))?;
    if node.class != AgentClass::Person {
        return Err(Error::InvalidInput(format!(
            "track {track_id} is a {}, attentiveness needs a person",
            node.class
        )));
    }
    let face = node
        .face
        .as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("track {track_id} has no face feature")))?;
    Ok(classify_attention(face, clf)?.0)
}

/// Labelled face features for classifier training; `NotSure` is dropped.
pub fn attention_samples(episodes: &[Episode]) -> Vec<(Vec<f64>, bool)> {
    let mut out = Vec::new();
    for e in episodes {
        for node in &e.final_frame().nodes {
            let (Some(face), Some(label)) = (&node.face, &node.attention) else { continue };
            if !node.present || node.class != AgentClass::Person {
                continue;
            }
            match label.label {
                AttentionState::Looking => out.push((face.clone(), true)),
                AttentionState::NotLooking => out.push((face.clone(), false)),
                AttentionState::NotSure => {}
            }
        }
    }
    out
}

/// CSV with columns `episode,track_id,s_look`.
pub fn looks_csv(rows: &[(usize, i64, f64)]) -> String {
    let mut out = String::from("episode,track_id,s_look\n");
    for (e, id, s) in rows {
        let _ = writeln!(out, "{e},{id},{s}");
    }
    out
}
