//! Domain vocabulary: boxes, agent classes, labels, frames and episodes.
//!
//! An [`Episode`] is a clip of `Z` frames. Every frame holds exactly `N`
//! node slots; slot 0 is always the ego vehicle, the remaining slots hold
//! tracked traffic agents or padding. Absent slots carry `present = false`
//! and an all-zero feature, which is the single mechanism used for padding,
//! tracking dropouts and masking interventions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Track id used by padding slots.
pub const PADDING_ID: i64 = -1;
/// Track id of the ego node.
pub const EGO_ID: i64 = 0;

/// Axis-aligned box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

macro_rules! closed_set {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $tag:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $tag)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn tag(&self) -> &'static str {
                match self {
                    $($name::$variant => $tag),+
                }
            }

            pub fn index(&self) -> usize {
                Self::ALL.iter().position(|v| v == self).expect("variant listed in ALL")
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.tag())
            }
        }

        impl std::str::FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.tag() == s)
                    .ok_or_else(|| Error::InvalidInput(format!(
                        "unknown {} tag `{}`", stringify!($name), s
                    )))
            }
        }
    };
}

closed_set!(
    /// Object classes kept as graph nodes, plus the ego vehicle.
    AgentClass {
        Person => "person",
        Bicycle => "bicycle",
        Car => "car",
        Motorcycle => "motorcycle",
        Bus => "bus",
        Truck => "truck",
        TrafficLight => "traffic-light",
        StopSign => "stop-sign",
        Ego => "ego",
    }
);

closed_set!(
    /// Clip-level driver response label.
    DriverResponse {
        Continue => "Continue",
        Alter => "Alter",
    }
);

closed_set!(
    /// Per-frame intended maneuver.
    DriverAction {
        LeftTurn => "Left-Turn",
        RightTurn => "Right-Turn",
        GoStraight => "Go-Straight",
    }
);

closed_set!(
    /// The evaluated risk situation classes.
    RiskSituation {
        CrossingPedestrian => "Crossing Pedestrian",
        CrossingVehicle => "Crossing Vehicle",
        CarBlockingEgoLane => "Car Blocking Ego Lane",
        Congestion => "Congestion",
        CutIn => "Cut-In",
        Jaywalking => "Jaywalking",
        TrafficLight => "Traffic Light",
        StopSign => "Stop Sign",
    }
);

closed_set!(
    AttentionState {
        Looking => "Looking",
        NotLooking => "NotLooking",
        NotSure => "NotSure",
    }
);

closed_set!(
    Occlusion {
        None => "none",
        Partial => "partial",
        Full => "full",
    }
);

/// Pedestrian attentiveness annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLabel {
    pub label: AttentionState,
    #[serde(default)]
    pub face_box: Option<BoundingBox>,
    pub body_box: BoundingBox,
    pub occlusion: Occlusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNode {
    #[serde(rename = "id")]
    pub track_id: i64,
    pub class: AgentClass,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "feat")]
    pub feature: Vec<f64>,
    pub present: bool,
    /// Face-crop embedding, for pedestrians with a visible face.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<f64>>,
    #[serde(default, rename = "attn", skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionLabel>,
}

impl AgentNode {
    pub fn padding(d: usize) -> Self {
        Self {
            track_id: PADDING_ID,
            class: AgentClass::Car,
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box"),
            feature: vec![0.0; d],
            present: false,
            face: None,
            attention: None,
        }
    }

    pub fn is_padding(&self) -> bool {
        self.track_id == PADDING_ID
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub nodes: Vec<AgentNode>,
}

impl Frame {
    pub fn ego(&self) -> &AgentNode {
        &self.nodes[0]
    }

    pub fn present_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.present).count()
    }

    pub fn node(&self, track_id: i64) -> Option<&AgentNode> {
        self.nodes.iter().find(|n| n.track_id == track_id && !n.is_padding())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub response: DriverResponse,
    pub actions: Vec<DriverAction>,
    pub situation: RiskSituation,
    pub causal_track_id: Option<i64>,
    pub gt_box: Option<BoundingBox>,
}

impl Episode {
    pub fn z(&self) -> usize {
        self.frames.len()
    }

    pub fn n(&self) -> usize {
        self.frames.first().map_or(0, |f| f.nodes.len())
    }

    pub fn d(&self) -> usize {
        self.frames
            .first()
            .and_then(|f| f.nodes.first())
            .map_or(0, |n| n.feature.len())
    }

    pub fn final_frame(&self) -> &Frame {
        self.frames.last().expect("episode has at least one frame")
    }

    /// Non-ego tracks present in the final frame, sorted by track id.
    pub fn candidates(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self
            .final_frame()
            .nodes
            .iter()
            .filter(|n| n.present && n.class != AgentClass::Ego && !n.is_padding())
            .map(|n| n.track_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// All real (non-padding) track ids appearing anywhere in the clip.
    pub fn track_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self
            .frames
            .iter()
            .flat_map(|f| f.nodes.iter())
            .filter(|n| !n.is_padding())
            .map(|n| n.track_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// One broken invariant, located by frame (1-based `t`) when applicable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(t) => write!(f, "frame {t}, {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Checks every episode, frame and node invariant. An empty list means the
/// episode is well formed.
pub fn validate_episode(e: &Episode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |frame: Option<usize>, field: String, message: String| {
        out.push(Violation { frame, field, message })
    };

    if e.frames.is_empty() {
        push(None, "frames".into(), "episode has no frames".into());
        return out;
    }
    if e.actions.len() != e.z() {
        push(
            None,
            "actions".into(),
            format!("{} action labels for {} frames", e.actions.len(), e.z()),
        );
    }

    let n = e.n();
    let d = e.d();
    let mut classes: BTreeMap<i64, AgentClass> = BTreeMap::new();

    for (k, frame) in e.frames.iter().enumerate() {
        let t = k + 1;
        if frame.t != t {
            push(Some(t), "t".into(), format!("frame index {} out of order", frame.t));
        }
        if frame.nodes.len() != n {
            push(
                Some(t),
                "nodes".into(),
                format!("{} slots, expected {n}", frame.nodes.len()),
            );
        }
        match frame.nodes.first() {
            Some(ego) if ego.class == AgentClass::Ego && ego.present && ego.track_id == EGO_ID => {}
            _ => push(
                Some(t),
                "nodes[0]".into(),
                "slot 0 must be the present ego node with track id 0".into(),
            ),
        }
        let mut seen = Vec::new();
        for (slot, node) in frame.nodes.iter().enumerate() {
            let field = |name: &str| format!("nodes[{slot}].{name}");
            if slot > 0 && node.class == AgentClass::Ego {
                push(Some(t), field("class"), "ego may only occupy slot 0".into());
            }
            if node.feature.len() != d {
                push(
                    Some(t),
                    field("feat"),
                    format!("length {}, expected {d}", node.feature.len()),
                );
            }
            if node.feature.iter().any(|v| !v.is_finite()) {
                push(Some(t), field("feat"), "non-finite feature value".into());
            }
            if !node.present && node.feature.iter().any(|&v| v != 0.0) {
                push(Some(t), field("feat"), "absent node with nonzero feature".into());
            }
            if node.is_padding() {
                if node.present {
                    push(Some(t), field("present"), "padding slot marked present".into());
                }
                continue;
            }
            if node.track_id < 0 {
                push(Some(t), field("id"), format!("negative track id {}", node.track_id));
            }
            if seen.contains(&node.track_id) {
                push(Some(t), field("id"), format!("duplicate track id {}", node.track_id));
            }
            seen.push(node.track_id);
            match classes.get(&node.track_id) {
                Some(c) if *c != node.class => push(
                    Some(t),
                    field("class"),
                    format!("track {} changed class from {c} to {}", node.track_id, node.class),
                ),
                Some(_) => {}
                None => {
                    classes.insert(node.track_id, node.class);
                }
            }
        }
    }

    if let Some(id) = e.causal_track_id {
        let last = e.final_frame();
        match last.node(id) {
            Some(node) if node.present && node.class != AgentClass::Ego => {}
            _ => push(
                Some(e.z()),
                "causal_id".into(),
                format!("causal track {id} is not a present non-ego agent in the final frame"),
            ),
        }
    }
    if e.response == DriverResponse::Alter && e.gt_box.is_none() {
        push(None, "gt_box".into(), "Alter episode without a risk-object box".into());
    }
    out
}
