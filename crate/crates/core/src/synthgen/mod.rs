//! Synthetic driving scenes with a known causal agent.
//!
//! Each episode places the ego at the origin of the decision frame with a
//! planned path (straight, or turning after some distance) and a corridor of
//! fixed width around it. In an `Alter` episode exactly one agent's
//! constant-velocity trajectory enters the corridor within the horizon; every
//! other agent keeps a safety margin from it for the whole horizon. A
//! `Continue` episode has no intruder at all. Randomness for episode `i`
//! comes from stream `i` of the configured seed, so any subset of episodes
//! can be regenerated independently.

mod embed;
mod io;
mod split;
pub mod world;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use embed::{descriptor, Embedder, NodeState, DESCRIPTOR_LEN};
pub use io::{attention_warnings, episode_from_json, episode_to_json, ingest_raid, parse_jsonl, write_jsonl};
pub use split::{split, split_indices};
use world::{Camera, Corridor, EgoPlan, Intent, KinematicAgent, Point};

use crate::error::{Error, Result};
use crate::types::{
    AgentClass, AgentNode, AttentionLabel, AttentionState, DriverAction, DriverResponse, Episode, Frame,
    Occlusion, RiskSituation, EGO_ID,
};

/// Generator settings, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    /// Frames per episode.
    pub z: usize,
    /// Node slots per frame, ego included.
    pub slots: usize,
    /// Inclusive range of non-ego agents per episode.
    pub n_agents_range: [usize; 2],
    pub d: usize,
    /// Standard deviation of additive feature noise.
    pub noise_sigma: f64,
    /// Standard deviation of additive face-feature noise.
    pub face_noise: f64,
    pub situation_mix: BTreeMap<RiskSituation, f64>,
    /// Probability that an episode is `Alter`.
    pub alter_fraction: f64,
    /// Probability that the ego turns (left and right equally likely).
    pub turn_rate: f64,
    /// Probability of a distractor parked on the straight continuation when
    /// the ego turns.
    pub decoy_rate: f64,
    /// Per-frame chance that a distractor is missed before the last frame.
    pub dropout: f64,
    pub looking_rate: f64,
    pub not_sure_rate: f64,
    pub corridor_width: f64,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// Seconds ahead over which intrusions count.
    pub horizon: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            z: 3,
            slots: 25,
            n_agents_range: [3, 9],
            d: 128,
            noise_sigma: 0.02,
            face_noise: 0.05,
            situation_mix: RiskSituation::ALL.iter().map(|s| (*s, 1.0 / 8.0)).collect(),
            alter_fraction: 0.5,
            turn_rate: 2.0 / 3.0,
            decoy_rate: 0.5,
            dropout: 0.1,
            looking_rate: 0.3,
            not_sure_rate: 0.05,
            corridor_width: 3.5,
            frame_interval: 0.5,
            horizon: 4.0,
        }
    }
}

impl WorldConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.z == 0 {
            return fail("z must be at least 1".into());
        }
        let [lo, hi] = self.n_agents_range;
        if lo == 0 || lo > hi {
            return fail(format!("n_agents_range [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        if hi + 1 > self.slots {
            return fail(format!("{hi} agents plus the ego do not fit in {} slots", self.slots));
        }
        if self.d < DESCRIPTOR_LEN {
            return fail(format!("d must be at least {DESCRIPTOR_LEN}"));
        }
        if self.situation_mix.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return fail("situation probabilities must be finite and non-negative".into());
        }
        let total: f64 = self.situation_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("situation probabilities sum to {total}, expected 1"));
        }
        for (name, p) in [
            ("alter_fraction", self.alter_fraction),
            ("turn_rate", self.turn_rate),
            ("decoy_rate", self.decoy_rate),
            ("dropout", self.dropout),
            ("looking_rate", self.looking_rate),
            ("not_sure_rate", self.not_sure_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if self.looking_rate + self.not_sure_rate > 1.0 {
            return fail("looking_rate + not_sure_rate exceeds 1".into());
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("face_noise", self.face_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("corridor_width", self.corridor_width),
            ("frame_interval", self.frame_interval),
            ("horizon", self.horizon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.horizon < 1.5 {
            return fail("horizon must be at least 1.5 s".into());
        }
        Ok(())
    }
}

/// Ground-truth world behind one generated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub plan: EgoPlan,
    pub agents: Vec<KinematicAgent>,
    pub causal: Option<i64>,
    pub situation: RiskSituation,
    pub response: DriverResponse,
    pub corridor_width: f64,
    pub horizon: f64,
}

impl Scenario {
    pub fn corridor(&self) -> Corridor {
        Corridor::new(&self.plan, self.corridor_width)
    }

    /// Tracks whose trajectory enters the corridor within the horizon.
    pub fn intruders(&self) -> Vec<i64> {
        let c = self.corridor();
        self.agents.iter().filter(|a| c.intersects(a, self.horizon)).map(|a| a.track_id).collect()
    }
}

const MAX_TRIES: usize = 2000;

/// Episodes `0..count` of the configured world.
pub fn generate(config: &WorldConfig, count: usize) -> Result<Vec<Episode>> {
    Ok(generate_with_scenarios(config, count)?.into_iter().map(|(_, e)| e).collect())
}

/// Episodes together with the kinematic worlds they were rendered from.
pub fn generate_with_scenarios(config: &WorldConfig, count: usize) -> Result<Vec<(Scenario, Episode)>> {
    config.validate()?;
    let embedder = Embedder::new(config.d)?;
    (0..count).map(|i| generate_one(config, &embedder, i as u64)).collect()
}

/// Episode `index` of the configured world.
pub fn generate_one(config: &WorldConfig, embedder: &Embedder, index: u64) -> Result<(Scenario, Episode)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    for _ in 0..MAX_TRIES {
        if let Some(scenario) = sample_scenario(config, &mut rng) {
            let episode = render(config, embedder, &scenario, &mut rng);
            return Ok((scenario, episode));
        }
    }
    Err(Error::Degenerate(format!("could not place agents for episode {index}")))
}

fn pick_weighted<T: Copy, R: Rng>(rng: &mut R, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut r = rng.random_range(0.0..total);
    for (item, w) in items {
        if r < *w {
            return *item;
        }
        r -= w;
    }
    items.iter().rev().find(|(_, w)| *w > 0.0).expect("positive weight").0
}

fn sample_scenario(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Option<Scenario> {
    let mix: Vec<(RiskSituation, f64)> = cfg.situation_mix.iter().map(|(s, p)| (*s, *p)).collect();
    let situation = pick_weighted(rng, &mix);
    let alter = rng.random_bool(cfg.alter_fraction);
    let speed = rng.random_range(6.0..12.0);
    let action = if rng.random_bool(cfg.turn_rate) {
        if rng.random_bool(0.5) {
            DriverAction::LeftTurn
        } else {
            DriverAction::RightTurn
        }
    } else {
        DriverAction::GoStraight
    };
    let plan = EgoPlan {
        speed,
        action,
        turn_at: rng.random_range(8.0..14.0),
        length: (speed * cfg.horizon).clamp(12.0, 40.0),
    };
    let corridor = Corridor::new(&plan, cfg.corridor_width);
    let n = rng.random_range(cfg.n_agents_range[0]..=cfg.n_agents_range[1]);

    let mut ids: Vec<i64> = (1..=999).collect();
    ids.shuffle(rng);
    let mut ids = ids.into_iter();
    let mut agents = Vec::with_capacity(n);
    let mut causal = None;
    if alter {
        let id = ids.next().expect("enough ids");
        let agent = (0..MAX_TRIES).find_map(|_| sample_causal(cfg, &plan, &corridor, situation, id, rng))?;
        causal = Some(id);
        agents.push(agent);
    }
    let mut decoy = plan.action != DriverAction::GoStraight && rng.random_bool(cfg.decoy_rate);
    while agents.len() < n {
        let id = ids.next().expect("enough ids");
        let agent = (0..MAX_TRIES).find_map(|_| sample_distractor(cfg, &plan, &corridor, id, decoy, rng))?;
        decoy = false;
        agents.push(agent);
    }
    Some(Scenario {
        plan,
        agents,
        causal,
        situation,
        response: if alter { DriverResponse::Alter } else { DriverResponse::Continue },
        corridor_width: cfg.corridor_width,
        horizon: cfg.horizon,
    })
}

/// Ego position at time `tau`: straight along `+y` before the decision
/// frame, along the planned path after it.
fn ego_position(plan: &EgoPlan, tau: f64) -> Point {
    if tau <= 0.0 {
        [0.0, plan.speed * tau]
    } else {
        plan.along(plan.speed * tau).0
    }
}

fn visible(cfg: &WorldConfig, plan: &EgoPlan, agent: &KinematicAgent) -> bool {
    let cam = Camera::default();
    (1..=cfg.z).all(|k| {
        let tau = (k as f64 - cfg.z as f64) * cfg.frame_interval;
        let p = agent.at(tau);
        let e = ego_position(plan, tau.min(0.0));
        cam.sees([p[0] - e[0], p[1] - e[1]], 2.0)
    })
}

fn sample_gaze<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> (AttentionState, f64) {
    let deg = PI / 180.0;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let r: f64 = rng.random();
    if r < cfg.not_sure_rate {
        (AttentionState::NotSure, sign * rng.random_range(50.0..65.0) * deg)
    } else if r < cfg.not_sure_rate + cfg.looking_rate {
        (AttentionState::Looking, rng.random_range(-35.0..35.0) * deg)
    } else {
        (AttentionState::NotLooking, sign * rng.random_range(75.0..180.0) * deg)
    }
}

fn agent<R: Rng>(
    cfg: &WorldConfig,
    rng: &mut R,
    track_id: i64,
    class: AgentClass,
    position: Point,
    velocity: Point,
    intent: Intent,
) -> KinematicAgent {
    let (gaze, face_yaw) = if class == AgentClass::Person {
        let (g, y) = sample_gaze(cfg, rng);
        (Some(g), y)
    } else {
        (None, 0.0)
    };
    KinematicAgent { track_id, class, position, velocity, intent, gaze, face_yaw }
}

fn sample_causal(
    cfg: &WorldConfig,
    plan: &EgoPlan,
    corridor: &Corridor,
    situation: RiskSituation,
    id: i64,
    rng: &mut ChaCha8Rng,
) -> Option<KinematicAgent> {
    let hw = corridor.half_width;
    let s = rng.random_range(6.0..plan.length.min(28.0));
    let (c, dir) = plan.along(s);
    let normal = [dir[1], -dir[0]];
    let e = rng.random_range(-(hw - 0.5)..(hw - 0.5));
    let target = [c[0] + e * normal[0], c[1] + e * normal[1]];
    let tau = rng.random_range(0.5..cfg.horizon - 0.5);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let scaled = |v: Point, k: f64| [v[0] * k, v[1] * k];
    let pick = |rng: &mut ChaCha8Rng, xs: &[AgentClass]| xs[rng.random_range(0..xs.len())];

    let (class, velocity, intent) = match situation {
        RiskSituation::CrossingPedestrian => {
            (AgentClass::Person, scaled(normal, side * rng.random_range(1.0..2.0)), Intent::CrossPath)
        }
        RiskSituation::Jaywalking => {
            let a = rng.random_range(-0.5..0.5f64);
            let d = [normal[0] * a.cos() - normal[1] * a.sin(), normal[0] * a.sin() + normal[1] * a.cos()];
            (AgentClass::Person, scaled(d, side * rng.random_range(1.2..2.5)), Intent::CrossPath)
        }
        RiskSituation::CrossingVehicle => {
            let class = pick(rng, &[AgentClass::Car, AgentClass::Truck, AgentClass::Motorcycle, AgentClass::Bicycle]);
            let speed = if class == AgentClass::Bicycle {
                rng.random_range(3.0..6.0)
            } else {
                rng.random_range(4.0..9.0)
            };
            (class, scaled(normal, side * speed), Intent::CrossPath)
        }
        RiskSituation::CarBlockingEgoLane => {
            (pick(rng, &[AgentClass::Car, AgentClass::Truck, AgentClass::Bus]), [0.0, 0.0], Intent::BlockLane)
        }
        RiskSituation::Congestion => {
            let class = pick(rng, &[AgentClass::Car, AgentClass::Truck, AgentClass::Bus]);
            (class, scaled(dir, rng.random_range(0.0..3.0)), Intent::Parallel)
        }
        RiskSituation::CutIn => {
            let class = pick(rng, &[AgentClass::Car, AgentClass::Motorcycle]);
            let fwd = rng.random_range(3.0..8.0);
            let lat = rng.random_range(1.0..2.0) * side;
            let v = [dir[0] * fwd + normal[0] * lat, dir[1] * fwd + normal[1] * lat];
            (class, v, Intent::Parallel)
        }
        RiskSituation::TrafficLight => (AgentClass::TrafficLight, [0.0, 0.0], Intent::Stationary),
        RiskSituation::StopSign => (AgentClass::StopSign, [0.0, 0.0], Intent::Stationary),
    };
    let moving = velocity != [0.0, 0.0] && matches!(intent, Intent::CrossPath)
        || situation == RiskSituation::CutIn;
    let position = if moving {
        [target[0] - velocity[0] * tau, target[1] - velocity[1] * tau]
    } else {
        target
    };
    let a = agent(cfg, rng, id, class, position, velocity, intent);
    (corridor.clearance(&a, cfg.horizon) <= hw - 0.5 && visible(cfg, plan, &a)).then_some(a)
}

const DISTRACTOR_CLASSES: [(AgentClass, f64); 8] = [
    (AgentClass::Car, 0.35),
    (AgentClass::Person, 0.25),
    (AgentClass::Bicycle, 0.1),
    (AgentClass::Truck, 0.08),
    (AgentClass::Motorcycle, 0.07),
    (AgentClass::Bus, 0.05),
    (AgentClass::TrafficLight, 0.05),
    (AgentClass::StopSign, 0.05),
];

fn sample_distractor(
    cfg: &WorldConfig,
    plan: &EgoPlan,
    corridor: &Corridor,
    id: i64,
    decoy: bool,
    rng: &mut ChaCha8Rng,
) -> Option<KinematicAgent> {
    let hw = corridor.half_width;
    let class = pick_weighted(rng, &DISTRACTOR_CLASSES);
    let is_static = matches!(class, AgentClass::TrafficLight | AgentClass::StopSign);
    let (position, velocity, intent) = if decoy {
        let lo = plan.turn_at + hw + 2.0;
        let y = rng.random_range(lo..lo.max(40.0) + 1.0);
        let x = rng.random_range(-1.2..1.2);
        let v = if is_static || rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..2.0) };
        ([x, y], [0.0, v], if v == 0.0 { Intent::Stationary } else { Intent::Parallel })
    } else {
        let position = [rng.random_range(-20.0..20.0), rng.random_range(3.0..45.0)];
        let slow = matches!(class, AgentClass::Person);
        let intent = if is_static {
            Intent::Stationary
        } else {
            pick_weighted(rng, &[(Intent::Stationary, 0.3), (Intent::Parallel, 0.4), (Intent::CrossPath, 0.3)])
        };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let velocity = match intent {
            Intent::Parallel => {
                let v = if slow { rng.random_range(0.5..1.5) } else { rng.random_range(3.0..12.0) };
                [0.0, sign * v]
            }
            Intent::CrossPath => {
                let v = if slow { rng.random_range(1.0..2.0) } else { rng.random_range(4.0..9.0) };
                [sign * v, 0.0]
            }
            _ => [0.0, 0.0],
        };
        (position, velocity, intent)
    };
    let a = agent(cfg, rng, id, class, position, velocity, intent);
    (corridor.clearance(&a, cfg.horizon) >= hw + 1.0 && visible(cfg, plan, &a)).then_some(a)
}

fn render(cfg: &WorldConfig, embedder: &Embedder, scenario: &Scenario, rng: &mut ChaCha8Rng) -> Episode {
    let cam = Camera::default();
    let image = (cam.width, cam.height);
    let plan = &scenario.plan;
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
    let face_noise = Normal::new(0.0, cfg.face_noise).expect("valid sigma");
    let signal = match plan.action {
        DriverAction::LeftTurn => -1.0,
        DriverAction::RightTurn => 1.0,
        DriverAction::GoStraight => 0.0,
    };
    let turn_at = if plan.action == DriverAction::GoStraight { 0.0 } else { plan.turn_at };

    let mut order: Vec<usize> = (0..scenario.agents.len()).collect();
    order.shuffle(rng);

    let embed_noisy = |desc: &[f64; DESCRIPTOR_LEN], rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut f = embedder.embed(desc);
        f.iter_mut().for_each(|v| *v += noise.sample(rng));
        f
    };

    let mut frames = Vec::with_capacity(cfg.z);
    for k in 1..=cfg.z {
        let tau = (k as f64 - cfg.z as f64) * cfg.frame_interval;
        let origin = ego_position(plan, tau);
        let rel = |p: Point| [p[0] - origin[0], p[1] - origin[1]];
        let future = |f: &dyn Fn(f64) -> Point| {
            let mut out = [[0.0; 2]; 4];
            for (j, o) in out.iter_mut().enumerate() {
                *o = rel(f(tau + (j + 1) as f64));
            }
            out
        };

        let ego_state = NodeState {
            class: AgentClass::Ego,
            position: [0.0, 0.0],
            velocity: [0.0, plan.speed],
            future: future(&|t| ego_position(plan, t)),
            bbox: cam.frame_box(),
            ego: Some([plan.speed, signal, turn_at]),
        };
        let mut nodes = vec![AgentNode {
            track_id: EGO_ID,
            class: AgentClass::Ego,
            bbox: cam.frame_box(),
            feature: embed_noisy(&descriptor(&ego_state, image), rng),
            present: true,
            face: None,
            attention: None,
        }];

        for &i in &order {
            let a = &scenario.agents[i];
            let position = rel(a.at(tau));
            let bbox = cam.project(a.class, position);
            let is_causal = scenario.causal == Some(a.track_id);
            let dropped = !is_causal && k < cfg.z && rng.random_bool(cfg.dropout);
            let state = NodeState {
                class: a.class,
                position,
                velocity: a.velocity,
                future: future(&|t| a.at(t)),
                bbox,
                ego: None,
            };
            let feature = embed_noisy(&descriptor(&state, image), rng);
            let (face, attention) = match a.gaze {
                Some(label) if !dropped => {
                    let f = vec![
                        a.face_yaw.cos() + face_noise.sample(rng),
                        a.face_yaw.sin() + face_noise.sample(rng),
                    ];
                    let attn = AttentionLabel {
                        label,
                        face_box: Some(cam.face_box(&bbox)),
                        body_box: bbox,
                        occlusion: Occlusion::None,
                    };
                    (Some(f), Some(attn))
                }
                _ => (None, None),
            };
            nodes.push(AgentNode {
                track_id: a.track_id,
                class: a.class,
                bbox,
                feature: if dropped { vec![0.0; cfg.d] } else { feature },
                present: !dropped,
                face,
                attention,
            });
        }
        nodes.resize(cfg.slots, AgentNode::padding(cfg.d));
        frames.push(Frame { t: k, nodes });
    }

    let gt_box = scenario.causal.map(|id| {
        frames.last().and_then(|f: &Frame| f.node(id)).expect("causal agent in the last frame").bbox
    });
    Episode {
        frames,
        response: scenario.response,
        actions: vec![plan.action; cfg.z],
        situation: scenario.situation,
        causal_track_id: scenario.causal,
        gt_box,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_episode;

    fn small() -> WorldConfig {
        WorldConfig { slots: 10, d: 32, ..WorldConfig::default() }
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = WorldConfig::default();
        cfg.validate().unwrap();
        assert_eq!(WorldConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = small();
        cfg.situation_mix.values_mut().for_each(|p| *p = 0.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = WorldConfig { n_agents_range: [0, 3], ..small() };
        assert!(cfg.validate().is_err());
        let cfg = WorldConfig { z: 0, ..small() };
        assert!(cfg.validate().is_err());
        assert!(WorldConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = WorldConfig::from_toml("seed = 9\nslots = 12\nd = 40\n").unwrap();
        assert_eq!((cfg.seed, cfg.slots, cfg.d, cfg.z), (9, 12, 40, 3));
    }

    #[test]
    fn episodes_are_valid_and_deterministic() {
        let cfg = small();
        let a = generate(&cfg, 20).unwrap();
        assert_eq!(a, generate(&cfg, 20).unwrap());
        for e in &a {
            assert!(validate_episode(e).is_empty(), "{:?}", validate_episode(e));
            assert_eq!((e.z(), e.n(), e.d()), (3, 10, 32));
        }
    }

    #[test]
    fn episode_streams_are_independent() {
        let cfg = small();
        let embedder = Embedder::new(cfg.d).unwrap();
        let all = generate(&cfg, 6).unwrap();
        assert_eq!(generate_one(&cfg, &embedder, 4).unwrap().1, all[4]);
    }
}
