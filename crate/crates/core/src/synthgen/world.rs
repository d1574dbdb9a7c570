//! Planar kinematics in the ego frame at the decision frame: the ego sits at
//! the origin facing `+y`, `x` grows to the right. Distances in meters,
//! times in seconds relative to the decision frame.

use serde::{Deserialize, Serialize};

use crate::types::{AgentClass, AttentionState, BoundingBox, DriverAction};

pub type Point = [f64; 2];

/// Motion intent of a generated agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    CrossPath,
    Parallel,
    Stationary,
    BlockLane,
}

/// A constant-velocity traffic agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicAgent {
    pub track_id: i64,
    pub class: AgentClass,
    /// Position at the decision frame.
    pub position: Point,
    pub velocity: Point,
    pub intent: Intent,
    /// Gaze state of pedestrians.
    pub gaze: Option<AttentionState>,
    /// Yaw of the face relative to the line of sight to the ego, radians.
    pub face_yaw: f64,
}

impl KinematicAgent {
    pub fn at(&self, tau: f64) -> Point {
        [self.position[0] + self.velocity[0] * tau, self.position[1] + self.velocity[1] * tau]
    }
}

/// The ego vehicle's plan: its speed and the path it will follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoPlan {
    pub speed: f64,
    pub action: DriverAction,
    /// Distance travelled before turning; unused for `Go-Straight`.
    pub turn_at: f64,
    /// Total path length ahead of the ego.
    pub length: f64,
}

impl EgoPlan {
    /// Vertices of the path centerline.
    pub fn centerline(&self) -> Vec<Point> {
        match self.action {
            DriverAction::GoStraight => vec![[0.0, 0.0], [0.0, self.length]],
            turn => {
                let side = if turn == DriverAction::LeftTurn { -1.0 } else { 1.0 };
                vec![[0.0, 0.0], [0.0, self.turn_at], [side * (self.length - self.turn_at), self.turn_at]]
            }
        }
    }

    /// Point at arc length `s` along the centerline, and the unit tangent there.
    pub fn along(&self, s: f64) -> (Point, Point) {
        let line = self.centerline();
        let mut left = s.clamp(0.0, self.length);
        for w in line.windows(2) {
            let seg = dist(w[0], w[1]);
            let dir = [(w[1][0] - w[0][0]) / seg, (w[1][1] - w[0][1]) / seg];
            if left <= seg {
                return ([w[0][0] + dir[0] * left, w[0][1] + dir[1] * left], dir);
            }
            left -= seg;
        }
        let n = line.len();
        let seg = dist(line[n - 2], line[n - 1]);
        let dir = [(line[n - 1][0] - line[n - 2][0]) / seg, (line[n - 1][1] - line[n - 2][1]) / seg];
        (line[n - 1], dir)
    }
}

/// Ego path corridor: all points within `half_width` of the centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub centerline: Vec<Point>,
    pub half_width: f64,
}

impl Corridor {
    pub fn new(plan: &EgoPlan, width: f64) -> Self {
        Self { centerline: plan.centerline(), half_width: width / 2.0 }
    }

    /// Smallest distance between the centerline and the agent's path over
    /// `tau` in `[0, horizon]`.
    pub fn clearance(&self, agent: &KinematicAgent, horizon: f64) -> f64 {
        let a = agent.at(0.0);
        let b = agent.at(horizon);
        self.centerline
            .windows(2)
            .map(|w| segment_distance(a, b, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the agent enters the corridor within the horizon.
    pub fn intersects(&self, agent: &KinematicAgent, horizon: f64) -> bool {
        self.clearance(agent, horizon) <= self.half_width
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Distance between segments `ab` and `cd`; zero when they cross.
pub fn segment_distance(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let (d1, d2) = (cross(c, d, a), cross(c, d, b));
    let (d3, d4) = (cross(a, b, c), cross(a, b, d));
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Pinhole camera looking along `+y` from `height` meters above the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub mount: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self { focal: 1000.0, width: 1920.0, height: 1200.0, mount: 1.5 }
    }
}

/// Physical size `(width, height)` and the height of the object's base above
/// the ground, meters.
pub fn object_size(class: AgentClass) -> (f64, f64, f64) {
    match class {
        AgentClass::Person => (0.6, 1.7, 0.0),
        AgentClass::Bicycle => (0.6, 1.6, 0.0),
        AgentClass::Car => (1.8, 1.5, 0.0),
        AgentClass::Motorcycle => (0.8, 1.5, 0.0),
        AgentClass::Bus => (2.5, 3.2, 0.0),
        AgentClass::Truck => (2.5, 3.0, 0.0),
        AgentClass::TrafficLight => (0.4, 1.0, 4.0),
        AgentClass::StopSign => (0.75, 0.75, 1.5),
        AgentClass::Ego => (0.0, 0.0, 0.0),
    }
}

impl Camera {
    pub fn frame_box(&self) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, self.width, self.height).expect("positive image size")
    }

    /// Horizontal image coordinate of a ground point, if it is in front of
    /// the camera.
    pub fn column(&self, p: Point) -> Option<f64> {
        (p[1] > 0.0).then(|| self.width / 2.0 + self.focal * p[0] / p[1])
    }

    /// Whether the point projects well inside the image horizontally.
    pub fn sees(&self, p: Point, min_depth: f64) -> bool {
        p[1] >= min_depth && (p[0] / p[1]).abs() <= 0.9 * (self.width / 2.0) / self.focal
    }

    /// Image box of an object standing at ground point `p`, clipped to the
    /// image.
    pub fn project(&self, class: AgentClass, p: Point) -> BoundingBox {
        let (w, h, base) = object_size(class);
        let s = self.focal / p[1];
        let u = self.width / 2.0 + p[0] * s;
        let v_bottom = self.height / 2.0 + (self.mount - base) * s;
        let v_top = v_bottom - h * s;
        let x0 = (u - w * s / 2.0).clamp(0.0, self.width - 1.0);
        let x1 = (u + w * s / 2.0).clamp(x0 + 1.0, self.width);
        let y0 = v_top.clamp(0.0, self.height - 1.0);
        let y1 = v_bottom.clamp(y0 + 1.0, self.height);
        BoundingBox::new(x0, y0, x1, y1).expect("clipped box has positive extent")
    }

    /// Head box on top of a pedestrian's body box.
    pub fn face_box(&self, body: &BoundingBox) -> BoundingBox {
        let w = body.width() * 0.35;
        let (cx, _) = body.center();
        let y0 = body.y_min();
        let h = (body.height() * 0.13).max(1.0);
        BoundingBox::new(cx - w / 2.0, y0, cx + w / 2.0, y0 + h).expect("face box inside body box")
    }
}
