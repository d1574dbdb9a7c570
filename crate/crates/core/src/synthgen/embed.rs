//! Fixed feature embedding of kinematic state.
//!
//! A node's descriptor holds its class one-hot, position, velocity,
//! extrapolated positions one to four seconds ahead, image box geometry and,
//! for the ego node only, the ego's speed, turn indicator and turn distance.
//! The feature vector is the descriptor followed by `tanh` random features of
//! it drawn from a constant seed, so the embedding never depends on the world
//! seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::types::{AgentClass, BoundingBox};

/// Length of the raw descriptor.
pub const DESCRIPTOR_LEN: usize = 28;

const EMBED_SEED: u64 = 0x5EED_F00D;

/// Inputs of a node descriptor at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub class: AgentClass,
    /// Relative to the ego at this frame.
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    /// Relative positions 1, 2, 3 and 4 seconds ahead.
    pub future: [[f64; 2]; 4],
    pub bbox: BoundingBox,
    /// `(speed, turn indicator, turn distance)`, ego node only.
    pub ego: Option<[f64; 3]>,
}

pub fn descriptor(s: &NodeState, image: (f64, f64)) -> [f64; DESCRIPTOR_LEN] {
    let mut d = [0.0; DESCRIPTOR_LEN];
    d[s.class.index()] = 1.0;
    d[9] = s.position[0] / 10.0;
    d[10] = s.position[1] / 20.0;
    d[11] = s.velocity[0] / 5.0;
    d[12] = s.velocity[1] / 5.0;
    for (k, p) in s.future.iter().enumerate() {
        d[13 + 2 * k] = p[0] / 10.0;
        d[14 + 2 * k] = p[1] / 20.0;
    }
    let (cx, cy) = s.bbox.center();
    d[21] = cx / image.0;
    d[22] = cy / image.1;
    d[23] = s.bbox.width() / image.0;
    d[24] = s.bbox.height() / image.1;
    if let Some([speed, signal, turn_at]) = s.ego {
        d[25] = speed / 10.0;
        d[26] = signal;
        d[27] = turn_at / 20.0;
    }
    d
}

/// Descriptor plus fixed random `tanh` features, `d` values in total.
#[derive(Debug, Clone)]
pub struct Embedder {
    d: usize,
    weights: Vec<[f64; DESCRIPTOR_LEN]>,
    offsets: Vec<f64>,
}

impl Embedder {
    pub fn new(d: usize) -> Result<Self> {
        if d < DESCRIPTOR_LEN {
            return Err(Error::Config(format!(
                "feature dimension {d} is below the descriptor length {DESCRIPTOR_LEN}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(EMBED_SEED);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let uniform = Uniform::new(-1.0, 1.0).expect("valid range");
        let extra = d - DESCRIPTOR_LEN;
        let weights = (0..extra)
            .map(|_| {
                let mut w = [0.0; DESCRIPTOR_LEN];
                w.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                w
            })
            .collect();
        let offsets = (0..extra).map(|_| uniform.sample(&mut rng)).collect();
        Ok(Self { d, weights, offsets })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Noise-free feature vector of a descriptor.
    pub fn embed(&self, desc: &[f64; DESCRIPTOR_LEN]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d);
        out.extend_from_slice(desc);
        for (w, b) in self.weights.iter().zip(&self.offsets) {
            let z: f64 = w.iter().zip(desc).map(|(a, x)| a * x).sum::<f64>() + b;
            out.push(z.tanh());
        }
        out
    }
}
