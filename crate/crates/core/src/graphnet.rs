//! Spatio-temporal interaction graph and graph-convolution reasoning.
//!
//! For every frame the adjacency between agents `i` and `j` is a softmax over
//! `j` of the appearance relation `(w m_i)^T (w' m_j) / sqrt(D)`, gated by a
//! presence indicator that is 1 only when both agents are present. Rows and
//! columns of absent agents are therefore exactly zero. Self-pairs take part
//! in the softmax.
//!
//! Node features are then propagated with `H' = relu(A H W + b)` for each
//! layer (weights shared across frames), pooled with a presence-weighted mean
//! over nodes and averaged over frames to give the relational feature `g`.

use rand::Rng;
use riskid_tape::{Mat, Tape, Var};

use crate::error::{Error, Result};
use crate::params::{init_uniform, Bound, Parameterized};
use crate::types::{AgentNode, Episode, Frame};

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// `D x D`
    pub weight: Mat,
    /// `1 x D`
    pub bias: Mat,
}

/// Learnable relation projections and graph-convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams {
    /// Projection `w` of the first argument of the appearance relation.
    pub w: Mat,
    /// Projection `w'` of the second argument.
    pub w_prime: Mat,
    pub gcn_layers: Vec<GcnLayer>,
}

impl RelationParams {
    pub fn init<R: Rng>(rng: &mut R, d: usize, layers: usize) -> Self {
        Self {
            w: init_uniform(rng, d, d, d),
            w_prime: init_uniform(rng, d, d, d),
            gcn_layers: (0..layers)
                .map(|_| GcnLayer {
                    weight: init_uniform(rng, d, d, d),
                    bias: Mat::zeros((1, d)),
                })
                .collect(),
        }
    }

    pub fn zeros(d: usize, layers: usize) -> Self {
        Self {
            w: Mat::zeros((d, d)),
            w_prime: Mat::zeros((d, d)),
            gcn_layers: (0..layers)
                .map(|_| GcnLayer {
                    weight: Mat::zeros((d, d)),
                    bias: Mat::zeros((1, d)),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Verifies every tensor against feature dimension `d`.
    pub fn check(&self, d: usize) -> Result<()> {
        let expect = |name: String, m: &Mat, shape: (usize, usize)| {
            if m.dim() != shape {
                return Err(Error::Shape { name, expected: shape, found: m.dim() });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("`{name}` has non-finite entries")));
            }
            Ok(())
        };
        expect("graph.w".into(), &self.w, (d, d))?;
        expect("graph.w_prime".into(), &self.w_prime, (d, d))?;
        for (k, layer) in self.gcn_layers.iter().enumerate() {
            expect(format!("graph.gcn.{k}.weight"), &layer.weight, (d, d))?;
            expect(format!("graph.gcn.{k}.bias"), &layer.bias, (1, d))?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> RelationVars {
        RelationVars {
            w: tape.leaf(self.w.clone()),
            w_prime: tape.leaf(self.w_prime.clone()),
            layers: self
                .gcn_layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }
}

impl Parameterized for RelationParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Mat)) {
        f("graph.w", &self.w);
        f("graph.w_prime", &self.w_prime);
        for (k, l) in self.gcn_layers.iter().enumerate() {
            f(&format!("graph.gcn.{k}.weight"), &l.weight);
            f(&format!("graph.gcn.{k}.bias"), &l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Mat)) {
        f("graph.w", &mut self.w);
        f("graph.w_prime", &mut self.w_prime);
        for (k, l) in self.gcn_layers.iter_mut().enumerate() {
            f(&format!("graph.gcn.{k}.weight"), &mut l.weight);
            f(&format!("graph.gcn.{k}.bias"), &mut l.bias);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelationVars {
    pub w: Var,
    pub w_prime: Var,
    pub layers: Vec<(Var, Var)>,
}

impl Bound for RelationVars {
    fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.w);
        out.push(self.w_prime);
        for (w, b) in &self.layers {
            out.push(*w);
            out.push(*b);
        }
    }
}

/// Row-stochastic adjacency for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySlice {
    pub a: Mat,
}

/// Pooled graph representation of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalFeature {
    pub g: Vec<f64>,
}

/// Appearance relation between two feature vectors.
pub fn appearance_relation(m_i: &[f64], m_j: &[f64], params: &RelationParams) -> Result<f64> {
    let d = params.dim();
    if m_i.len() != d || m_j.len() != d {
        return Err(Error::InvalidInput(format!(
            "feature lengths {} and {} do not match D = {d}",
            m_i.len(),
            m_j.len()
        )));
    }
    if m_i.iter().chain(m_j).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature".into()));
    }
    let theta = params.w.dot(&ndarray::ArrayView1::from(m_i));
    let phi = params.w_prime.dot(&ndarray::ArrayView1::from(m_j));
    Ok(theta.dot(&phi) / (d as f64).sqrt())
}

/// 1 when both nodes are present, 0 otherwise.
pub fn presence_gate(a: &AgentNode, b: &AgentNode) -> f64 {
    if a.present && b.present {
        1.0
    } else {
        0.0
    }
}

/// Per-frame graph input: node features (absent rows zeroed) and presence.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub features: Var,
    pub present: Vec<bool>,
}

/// Node feature matrix for a frame with absent rows forced to zero.
pub fn frame_matrix(frame: &Frame) -> Mat {
    let n = frame.nodes.len();
    let d = frame.nodes.first().map_or(0, |x| x.feature.len());
    let mut m = Mat::zeros((n, d));
    for (i, node) in frame.nodes.iter().enumerate() {
        if node.present {
            for (k, v) in node.feature.iter().enumerate() {
                m[[i, k]] = *v;
            }
        }
    }
    m
}

pub fn graph_inputs(tape: &mut Tape, episode: &Episode) -> Vec<FrameInput> {
    episode
        .frames
        .iter()
        .map(|f| FrameInput {
            features: tape.leaf(frame_matrix(f)),
            present: f.nodes.iter().map(|n| n.present).collect(),
        })
        .collect()
}

fn presence_mask(present: &[bool]) -> Mat {
    let n = present.len();
    Mat::from_shape_fn((n, n), |(i, j)| if present[i] && present[j] { 1.0 } else { 0.0 })
}

/// Adjacency for one frame, recorded on the tape.
pub fn adjacency_on_tape(tape: &mut Tape, input: &FrameInput, vars: &RelationVars) -> Result<Var> {
    let (n, d) = tape.shape(input.features);
    if input.present.len() != n {
        return Err(Error::InvalidInput("presence vector length differs from node count".into()));
    }
    if !input.present.iter().any(|p| *p) {
        return Err(Error::Degenerate("frame has no present node".into()));
    }
    let w_t = tape.transpose(vars.w);
    let wp_t = tape.transpose(vars.w_prime);
    let theta = tape.matmul(input.features, w_t);
    let phi = tape.matmul(input.features, wp_t);
    let phi_t = tape.transpose(phi);
    let logits = tape.matmul(theta, phi_t);
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    Ok(tape.masked_softmax_rows(logits, presence_mask(&input.present)))
}

/// Relational feature `g` (a `1 x D` row) recorded on the tape.
pub fn relational_feature_on_tape(
    tape: &mut Tape,
    inputs: &[FrameInput],
    vars: &RelationVars,
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("episode has no frames".into()));
    }
    let mut total: Option<Var> = None;
    for input in inputs {
        let a = adjacency_on_tape(tape, input, vars)?;
        let mut h = input.features;
        for (w, b) in &vars.layers {
            let (_, h_cols) = tape.shape(h);
            if tape.shape(*w).0 != h_cols {
                return Err(Error::Config(format!(
                    "GCN layer expects {} input features, got {h_cols}",
                    tape.shape(*w).0
                )));
            }
            let ah = tape.matmul(a, h);
            let ahw = tape.matmul(ah, *w);
            let pre = tape.add_row(ahw, *b);
            h = tape.relu(pre);
        }
        let count = input.present.iter().filter(|p| **p).count() as f64;
        let weights: Vec<f64> =
            input.present.iter().map(|p| if *p { 1.0 / count } else { 0.0 }).collect();
        let pool = tape.row(&weights);
        let pooled = tape.matmul(pool, h);
        total = Some(match total {
            Some(t) => tape.add(t, pooled),
            None => pooled,
        });
    }
    let total = total.expect("at least one frame");
    Ok(tape.scale(total, 1.0 / inputs.len() as f64))
}

/// Adjacency matrix of a frame.
pub fn build_adjacency(frame: &Frame, params: &RelationParams) -> Result<AdjacencySlice> {
    let d = frame.nodes.first().map_or(0, |n| n.feature.len());
    params.check(d)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let input = FrameInput {
        features: tape.leaf(frame_matrix(frame)),
        present: frame.nodes.iter().map(|n| n.present).collect(),
    };
    let a = adjacency_on_tape(&mut tape, &input, &vars)?;
    Ok(AdjacencySlice { a: tape.value(a).clone() })
}

/// Relational feature of an episode.
pub fn gcn_forward(episode: &Episode, params: &RelationParams) -> Result<RelationalFeature> {
    params.check(episode.d())?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let inputs = graph_inputs(&mut tape, episode);
    let g = relational_feature_on_tape(&mut tape, &inputs, &vars)?;
    Ok(RelationalFeature { g: tape.value(g).iter().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::*;
    use ndarray::array;

    fn node(id: i64, class: AgentClass, present: bool, feature: Vec<f64>) -> AgentNode {
        AgentNode {
            track_id: id,
            class,
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            feature: if present { feature } else { vec![0.0; feature.len()] },
            present,
            face: None,
            attention: None,
        }
    }

    fn episode(frames: Vec<Vec<AgentNode>>) -> Episode {
        let z = frames.len();
        Episode {
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(k, nodes)| Frame { t: k + 1, nodes })
                .collect(),
            response: DriverResponse::Continue,
            actions: vec![DriverAction::GoStraight; z],
            situation: RiskSituation::Congestion,
            causal_track_id: None,
            gt_box: None,
        }
    }

    fn scalar_params(w: f64, wp: f64, layers: &[(f64, f64)]) -> RelationParams {
        RelationParams {
            w: array![[w]],
            w_prime: array![[wp]],
            gcn_layers: layers
                .iter()
                .map(|(a, b)| GcnLayer { weight: array![[*a]], bias: array![[*b]] })
                .collect(),
        }
    }

    #[test]
    fn appearance_relation_cases() {
        let p = scalar_params(2.0, 3.0, &[]);
        assert_eq!(appearance_relation(&[1.0], &[1.0], &p).unwrap(), 6.0);
        assert_eq!(appearance_relation(&[0.0], &[0.0], &p).unwrap(), 0.0);
        let base = appearance_relation(&[0.7], &[1.3], &p).unwrap();
        let scaled = appearance_relation(&[0.7 * 2.5], &[1.3], &p).unwrap();
        assert!((scaled - 2.5 * base).abs() < 1e-12);
        assert!(appearance_relation(&[f64::NAN], &[1.0], &p).is_err());
        assert!(appearance_relation(&[1.0, 2.0], &[1.0], &p).is_err());
    }

    #[test]
    fn presence_gate_truth_table() {
        let a = node(1, AgentClass::Car, true, vec![1.0]);
        let b = node(2, AgentClass::Car, false, vec![1.0]);
        assert_eq!(presence_gate(&a, &a), 1.0);
        assert_eq!(presence_gate(&a, &b), 0.0);
        assert_eq!(presence_gate(&b, &b), 0.0);
    }

    #[test]
    fn constant_relation_gives_uniform_rows() {
        // zero projections make every logit 0
        let p = RelationParams::zeros(2, 1);
        let ep = episode(vec![vec![
            node(0, AgentClass::Ego, true, vec![1.0, 2.0]),
            node(1, AgentClass::Car, true, vec![0.5, 0.1]),
            node(2, AgentClass::Bus, true, vec![-1.0, 3.0]),
        ]]);
        let a = build_adjacency(&ep.frames[0], &p).unwrap().a;
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[[i, j]] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn absent_column_is_zero_and_rows_renormalise() {
        let p = RelationParams::zeros(1, 1);
        let frame = Frame {
            t: 1,
            nodes: vec![
                node(0, AgentClass::Ego, true, vec![1.0]),
                node(1, AgentClass::Car, false, vec![0.0]),
                node(2, AgentClass::Car, true, vec![2.0]),
            ],
        };
        let a = build_adjacency(&frame, &p).unwrap().a;
        assert_eq!(a.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(a.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(a[[0, 0]] + a[[0, 2]], 1.0);
        assert_eq!(a[[0, 0]], 0.5);
    }

    #[test]
    fn two_agent_adjacency_matches_hand_softmax() {
        let p = scalar_params(1.0, 0.5, &[]);
        let frame = Frame {
            t: 1,
            nodes: vec![
                node(0, AgentClass::Ego, true, vec![1.0]),
                node(1, AgentClass::Car, true, vec![2.0]),
            ],
        };
        let a = build_adjacency(&frame, &p).unwrap().a;
        // logits f_a(i, j) = m_i * 0.5 * m_j : [[0.5, 1.0], [1.0, 2.0]]
        let row = |x: f64, y: f64| (x.exp() / (x.exp() + y.exp()), y.exp() / (x.exp() + y.exp()));
        let (a00, a01) = row(0.5, 1.0);
        let (a10, a11) = row(1.0, 2.0);
        for (got, want) in [(a[[0, 0]], a00), (a[[0, 1]], a01), (a[[1, 0]], a10), (a[[1, 1]], a11)] {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn single_present_node_with_identity_layer_passes_feature_through() {
        let p = RelationParams {
            w: Mat::eye(2),
            w_prime: Mat::eye(2),
            gcn_layers: vec![GcnLayer { weight: Mat::eye(2), bias: Mat::zeros((1, 2)) }],
        };
        let ep = episode(vec![vec![
            node(0, AgentClass::Ego, true, vec![0.7, -0.4]),
            node(3, AgentClass::Car, false, vec![0.0, 0.0]),
        ]]);
        let g = gcn_forward(&ep, &p).unwrap().g;
        assert_eq!(g, vec![0.7, 0.0]);
    }

    #[test]
    fn zero_features_and_bias_give_zero_g() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let p = RelationParams::init(&mut rng, 3, 2);
        let ep = episode(vec![vec![
            node(0, AgentClass::Ego, true, vec![0.0; 3]),
            node(1, AgentClass::Car, true, vec![0.0; 3]),
        ]]);
        assert_eq!(gcn_forward(&ep, &p).unwrap().g, vec![0.0; 3]);
    }

    #[test]
    fn two_node_scalar_chain() {
        let (w, wp, wl, bl) = (0.8, -0.6, 1.5, 0.1);
        let p = scalar_params(w, wp, &[(wl, bl)]);
        let (m0, m1) = (1.2, -0.5);
        let ep = episode(vec![vec![
            node(0, AgentClass::Ego, true, vec![m0]),
            node(1, AgentClass::Car, true, vec![m1]),
        ]]);
        let g = gcn_forward(&ep, &p).unwrap().g[0];

        let fa = |x: f64, y: f64| (w * x) * (wp * y);
        let soft = |i: f64| {
            let (e0, e1) = (fa(i, m0).exp(), fa(i, m1).exp());
            (e0 / (e0 + e1), e1 / (e0 + e1))
        };
        let relu = |x: f64| x.max(0.0);
        let (a00, a01) = soft(m0);
        let (a10, a11) = soft(m1);
        let h0 = relu((a00 * m0 + a01 * m1) * wl + bl);
        let h1 = relu((a10 * m0 + a11 * m1) * wl + bl);
        let want = (h0 + h1) / 2.0;
        assert!((g - want).abs() < 1e-14, "{g} vs {want}");
    }

    #[test]
    fn mismatched_layer_shape_is_config_error() {
        let mut p = RelationParams::zeros(2, 1);
        p.gcn_layers[0].weight = Mat::zeros((3, 2));
        let ep = episode(vec![vec![node(0, AgentClass::Ego, true, vec![1.0, 1.0])]]);
        assert!(matches!(gcn_forward(&ep, &p), Err(Error::Shape { .. })));
    }
}
