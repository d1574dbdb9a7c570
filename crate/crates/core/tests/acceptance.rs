//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line to stderr (visible without `--nocapture`).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskid::actionnet::{action_loss, action_loss_on_tape, action_trace_on_tape, frame_inputs, ActionPrediction, ActionPredictorParams};
use riskid::attention::{attention_loss, attention_loss_on_tape, match_anchors, Anchor, AnchorHead, AttnGroundTruth, AttnLossConfig};
use riskid::fusion::{joint_risk, rank_agents, NEUTRAL_LOOK};
use riskid::graphnet::{build_adjacency, RelationParams};
use riskid::intervene::{argmax_lowest_id, forward_on_tape, mask_agent, response_logits, response_loss, InterventionResult, ModelConfig, RiskModel};
use riskid::metrics::{average_precision, icc, macc, EvalRecord};
use riskid::params::{collect_grads, Parameterized};
use riskid::synthgen::{generate, WorldConfig};
use riskid::train::{evaluate, train, EvalReport, TrainConfig};
use riskid::types::*;
use riskid_tape::{Mat, Tape, Var};

fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} - {detail}");
}

fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn random_node<R: Rng>(rng: &mut R, id: i64, d: usize, present: bool) -> AgentNode {
    let class = if id == EGO_ID { AgentClass::Ego } else { AgentClass::ALL[rng.random_range(0..8)] };
    let x = rng.random_range(0.0..500.0);
    AgentNode {
        track_id: id,
        class,
        bbox: bbox(x, 10.0, x + 20.0, 60.0),
        feature: (0..d).map(|_| if present { rng.random_range(-1.0..1.0) } else { 0.0 }).collect(),
        present,
        face: None,
        attention: None,
    }
}

fn random_frame<R: Rng>(rng: &mut R, t: usize, n: usize, d: usize) -> Frame {
    let nodes = (0..n)
        .map(|i| {
            let present = i == 0 || rng.random_bool(0.7);
            random_node(rng, i as i64, d, present)
        })
        .collect();
    Frame { t, nodes }
}

fn random_episode<R: Rng>(rng: &mut R, z: usize, n: usize, d: usize) -> Episode {
    let frames = (1..=z).map(|t| random_frame(rng, t, n, d)).collect();
    Episode {
        frames,
        response: if rng.random_bool(0.5) { DriverResponse::Alter } else { DriverResponse::Continue },
        actions: (0..z).map(|_| DriverAction::ALL[rng.random_range(0..3)]).collect(),
        situation: RiskSituation::CutIn,
        causal_track_id: None,
        gt_box: None,
    }
}

#[test]
fn criterion_1_adjacency_rows() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    for _ in 0..200 {
        let n = rng.random_range(1..=25);
        let d = rng.random_range(1..=8);
        let frame = random_frame(&mut rng, 1, n, d);
        let params = RelationParams::init(&mut rng, d, 1);
        let a = build_adjacency(&frame, &params).unwrap().a;
        for (i, node) in frame.nodes.iter().enumerate() {
            if node.present {
                worst = worst.max((a.row(i).sum() - 1.0).abs());
            } else {
                zero_ok &= a.row(i).iter().all(|v| *v == 0.0) && a.column(i).iter().all(|v| *v == 0.0);
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && zero_ok && elapsed < Duration::from_secs(5);
    report(1, pass, &format!("max |row sum - 1| = {worst:.2e}, absent rows/cols zero: {zero_ok}, {elapsed:.2?}"));
    assert!(pass);
}

/// Adds uniform noise to every parameter so that zero-initialised biases do
/// not leave a ReLU exactly on its kink.
fn jitter<P: Parameterized>(mut params: P, rng: &mut ChaCha8Rng) -> P {
    params.visit_mut(&mut |_, m| m.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1)));
    params
}

/// Largest relative error between tape gradients and central differences
/// over `coords` random coordinates.
fn grad_check<P: Parameterized + Clone>(
    params: &P,
    value: &dyn Fn(&P) -> f64,
    analytic: &[Mat],
    rng: &mut ChaCha8Rng,
    coords: usize,
) -> f64 {
    let sizes: Vec<usize> = params.named_tensors().iter().map(|(_, m)| m.len()).collect();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let t = rng.random_range(0..sizes.len());
        if sizes[t] == 0 {
            continue;
        }
        let e = rng.random_range(0..sizes[t]);
        let shifted = |delta: f64| {
            let mut p = params.clone();
            let mut k = 0;
            p.visit_mut(&mut |_, m| {
                if k == t {
                    *m.iter_mut().nth(e).expect("coordinate in range") += delta;
                }
                k += 1;
            });
            value(&p)
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let exact = *analytic[t].iter().nth(e).expect("coordinate in range");
        let scale = exact.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((exact - numeric).abs() / scale);
    }
    worst
}

fn response_objective(model: &RiskModel, e: &Episode) -> (f64, Vec<Mat>) {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let fwd = forward_on_tape(&mut tape, model, &vars, e).unwrap();
    let loss = tape.softmax_cross_entropy(fwd.logits, e.response.index());
    let grads = tape.backward(loss);
    (tape.scalar(loss), collect_grads(model, &vars, &grads))
}

fn action_objective(params: &ActionPredictorParams, e: &Episode) -> (f64, Vec<Mat>) {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let xs = frame_inputs(&mut tape, e);
    let steps = action_trace_on_tape(&mut tape, params, &vars, &xs).unwrap();
    let loss = action_loss_on_tape(&mut tape, &steps, &e.actions).unwrap();
    let grads = tape.backward(loss);
    (tape.scalar(loss), collect_grads(params, &vars, &grads))
}

struct AttnInstance {
    boxes: Vec<BoundingBox>,
    descriptors: Mat,
    assignment: Vec<Option<usize>>,
    gts: Vec<AttnGroundTruth>,
    cfg: AttnLossConfig,
}

fn attn_instance(rng: &mut ChaCha8Rng, k: usize) -> AttnInstance {
    let faces = rng.random_range(1..=3);
    let gts: Vec<AttnGroundTruth> = (0..faces)
        .map(|i| {
            let x = 100.0 * i as f64 + rng.random_range(0.0..20.0);
            AttnGroundTruth {
                face_box: bbox(x, 20.0, x + rng.random_range(15.0..30.0), 20.0 + rng.random_range(15.0..30.0)),
                is_face: rng.random_bool(0.8),
                looking: match rng.random_range(0..3) {
                    0 => None,
                    1 => Some(true),
                    _ => Some(false),
                },
            }
        })
        .collect();
    let mut boxes = Vec::new();
    for g in &gts {
        for _ in 0..2 {
            let f = &g.face_box;
            let j = |r: &mut ChaCha8Rng| r.random_range(-2.0..2.0);
            boxes.push(bbox(f.x_min() + j(rng), f.y_min() + j(rng), f.x_max() + j(rng), f.y_max() + j(rng)));
        }
    }
    boxes.push(bbox(400.0, 300.0, 420.0, 330.0));
    let gt_boxes: Vec<BoundingBox> = gts.iter().map(|g| g.face_box).collect();
    let assignment = match_anchors(&boxes, &gt_boxes, 0.5);
    let descriptors = Mat::from_shape_fn((boxes.len(), k), |_| rng.random_range(-1.0..1.0));
    let cfg = AttnLossConfig::new(rng.random_range(0.1..2.0), 0.5).unwrap();
    AttnInstance { boxes, descriptors, assignment, gts, cfg }
}

fn attention_objective(head: &AnchorHead, inst: &AttnInstance) -> (f64, Vec<Mat>) {
    let mut tape = Tape::new();
    let vars = head.linear.bind(&mut tape);
    let desc = tape.leaf(inst.descriptors.clone());
    let loss: Var =
        attention_loss_on_tape(&mut tape, vars.clone(), desc, &inst.boxes, &inst.assignment, &inst.gts, &inst.cfg)
            .unwrap();
    let grads = tape.backward(loss);
    (tape.scalar(loss), collect_grads(head, &vars, &grads))
}

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_a, mut worst_b, mut worst_c): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut value_gap: f64 = 0.0;
    for i in 0..20 {
        let (z, n, d) = (rng.random_range(1..=3), rng.random_range(2..=5), rng.random_range(2..=5));
        let e = random_episode(&mut rng, z, n, d);

        let cfg = ModelConfig {
            d,
            gcn_layers: rng.random_range(1..=2),
            head_hidden: 4,
            use_action: i % 2 == 1,
            cell: if i % 4 < 2 { "lstm" } else { "gru" }.into(),
            hidden: 3,
            p_e: rng.random_range(1..=3),
            p_d: rng.random_range(1..=3),
        };
        let model = jitter(RiskModel::init(&mut rng, &cfg).unwrap(), &mut rng);
        let (_, g) = response_objective(&model, &e);
        worst_a = worst_a.max(grad_check(&model, &|m| response_objective(m, &e).0, &g, &mut rng, 25));

        let cell = if i % 2 == 0 { "lstm" } else { "gru" };
        let params = jitter(ActionPredictorParams::init(&mut rng, cell, d, 3, cfg.p_e, cfg.p_d).unwrap(), &mut rng);
        let (_, g) = action_objective(&params, &e);
        worst_b = worst_b.max(grad_check(&params, &|p| action_objective(p, &e).0, &g, &mut rng, 25));

        let k = rng.random_range(2..=5);
        let inst = attn_instance(&mut rng, k);
        let head = jitter(AnchorHead::init(&mut rng, k), &mut rng);
        let (v, g) = attention_objective(&head, &inst);
        worst_c = worst_c.max(grad_check(&head, &|h| attention_objective(h, &inst).0, &g, &mut rng, 25));
        let anchors: Vec<Anchor> = inst
            .boxes
            .iter()
            .enumerate()
            .map(|(r, b)| head.predict(*b, inst.descriptors.row(r).as_slice().unwrap()).unwrap())
            .collect();
        let direct = attention_loss(&anchors, &inst.assignment, &inst.gts, &inst.cfg).unwrap().total;
        value_gap = value_gap.max((direct - v).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_a < 1e-3 && worst_b < 1e-3 && worst_c < 1e-3 && value_gap < 1e-9 && elapsed < Duration::from_secs(60);
    report(
        2,
        pass,
        &format!(
            "max rel err response {worst_a:.2e}, action {worst_b:.2e}, attention {worst_c:.2e} (tape vs direct {value_gap:.1e}), {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_masked_node_nullity() {
    let world = WorldConfig { slots: 8, d: 32, n_agents_range: [2, 7], seed: 33, ..WorldConfig::default() };
    let episodes = generate(&world, 100).unwrap();
    let cfg = ModelConfig { d: 32, hidden: 8, head_hidden: 8, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = RiskModel::init(&mut rng, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for e in &episodes {
        let ids = e.candidates();
        let id = ids[rng.random_range(0..ids.len())];
        let masked = mask_agent(e, id).unwrap();
        let base = response_logits(&masked, &model).unwrap();
        let mut perturbed = masked.clone();
        for f in &mut perturbed.frames {
            for n in f.nodes.iter_mut().filter(|n| n.track_id == id) {
                n.feature.iter_mut().for_each(|v| *v = rng.random_range(-50.0..50.0));
            }
        }
        let moved = response_logits(&perturbed, &model).unwrap();
        worst = worst.max((base[0] - moved[0]).abs()).max((base[1] - moved[1]).abs());
    }
    let pass = worst < 1e-9;
    report(3, pass, &format!("max logit change {worst:.2e} over 100 episodes"));
    assert!(pass);
}

const STUDY_D: usize = 128;

fn study_world(seed: u64) -> WorldConfig {
    WorldConfig { slots: 10, d: STUDY_D, seed, ..WorldConfig::default() }
}

fn study_config(use_action: bool) -> TrainConfig {
    let mut cfg = TrainConfig { iterations: 2000, n_agents: 10, seed: 41, eval_every: 200, ..TrainConfig::default() };
    cfg.model.d = STUDY_D;
    cfg.model.use_action = use_action;
    cfg.attention.iterations = 0;
    cfg
}

fn study_data() -> &'static (Vec<Episode>, Vec<Episode>) {
    static DATA: OnceLock<(Vec<Episode>, Vec<Episode>)> = OnceLock::new();
    DATA.get_or_init(|| {
        let train = generate(&study_world(401), 2000).unwrap();
        let test = generate(&WorldConfig { alter_fraction: 1.0, ..study_world(402) }, 500).unwrap();
        (train, test)
    })
}

/// Trained-and-evaluated model with the action branch, shared by the study
/// and the ablation.
fn full_model_report() -> &'static (EvalReport, Duration) {
    static REPORT: OnceLock<(EvalReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let start = Instant::now();
        let (train_set, test_set) = study_data();
        let (ckpt, _) = train(&study_config(true), train_set).unwrap();
        let report = evaluate(&ckpt, test_set, 7).unwrap();
        (report, start.elapsed())
    })
}

#[test]
fn criterion_4_intervention_study() {
    let (eval, elapsed) = full_model_report();
    let (acc, racc) = (eval.causal_accuracy, eval.random_causal_accuracy);
    let (m, rm) = (eval.macc.average.macc, eval.random.average.macc);
    let pass = acc >= 3.0 * racc && m >= 3.0 * rm && *elapsed < Duration::from_secs(15 * 60);
    report(4, pass, &format!(
        "causal accuracy {acc:.2}% vs random {racc:.2}%, mAcc {m:.2} vs random {rm:.2}, over {} episodes, {elapsed:.1?}",
        eval.results.len()
    ));
    assert!(pass);
}

#[test]
fn criterion_5_action_branch_ablation() {
    let (with_action, _) = full_model_report();
    let (train_set, test_set) = study_data();
    let (ckpt, _) = train(&study_config(false), train_set).unwrap();
    let without = evaluate(&ckpt, test_set, 7).unwrap();
    let drop = without.causal_accuracy - with_action.causal_accuracy;
    let pass = drop <= 2.0;
    report(5, pass, &format!(
        "causal accuracy with action branch {:.2}%, without {:.2}% (drop {drop:.2} points)",
        with_action.causal_accuracy, without.causal_accuracy
    ));
    assert!(pass);
}

/// AP by enumerating every distinct score threshold in exact arithmetic.
fn brute_force_ap(scores: &[i64], labels: &[bool]) -> Ratio<i64> {
    let positives = labels.iter().filter(|l| **l).count() as i64;
    let mut thresholds: Vec<i64> = scores.to_vec();
    thresholds.sort_unstable_by(|a, b| b.cmp(a));
    thresholds.dedup();
    let points: Vec<(Ratio<i64>, Ratio<i64>)> = thresholds
        .iter()
        .map(|&t| {
            let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
            let tp = predicted.iter().filter(|&&i| labels[i]).count() as i64;
            (Ratio::new(tp, positives), Ratio::new(tp, predicted.len() as i64))
        })
        .collect();
    let mut ap = Ratio::from_integer(0);
    let mut prev_recall = Ratio::from_integer(0);
    for (k, (recall, _)) in points.iter().enumerate() {
        let best = points[k..].iter().map(|p| p.1).max().unwrap();
        ap += (*recall - prev_recall) * best;
        prev_recall = *recall;
    }
    ap
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[test]
fn criterion_6_metric_oracles() {
    let record = |pred: BoundingBox| EvalRecord {
        episode: 0,
        predicted: pred,
        truth: bbox(0.0, 0.0, 100.0, 100.0),
        situation: RiskSituation::Congestion,
    };
    // IoU 0.72 clears 0.50 through 0.70: five of ten thresholds.
    let a = macc(&[record(bbox(0.0, 0.0, 100.0, 72.0))]).unwrap().overall.macc;
    // IoU exactly 0.50 counts at the 0.50 threshold only.
    let b = macc(&[record(bbox(0.0, 0.0, 100.0, 50.0))]).unwrap().overall;
    let macc_ok = a == 50.0 && b.acc[0] == 100.0 && b.acc[1] == 0.0 && b.macc == 10.0;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=9);
        let scores: Vec<i64> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[rng.random_range(0..n)] = true;
        let oracle = ratio_f64(brute_force_ap(&scores, &labels));
        let as_f64: Vec<f64> = scores.iter().map(|s| *s as f64 / 4.0).collect();
        worst = worst.max((average_precision(&as_f64, &labels).unwrap() - oracle).abs());
    }
    let pass = macc_ok && worst <= 1e-12;
    report(6, pass, &format!("mAcc cases {a} and {}, max AP deviation from exact enumeration {worst:.1e}", b.macc));
    assert!(pass);
}

#[test]
fn criterion_7_joint_risk() {
    let mut grid_ok = true;
    for i in 0..10 {
        for j in 0..10 {
            let (roi, look) = (i as f64 / 9.0, j as f64 / 9.0);
            grid_ok &= joint_risk(roi, look).unwrap() == (roi + (1.0 - look)) / 2.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut monotone = true;
    for _ in 0..10_000 {
        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
        let (lo, hi) = (a.min(b), a.max(b));
        let other = rng.random::<f64>();
        monotone &= joint_risk(hi, other).unwrap() >= joint_risk(lo, other).unwrap();
        monotone &= joint_risk(other, hi).unwrap() <= joint_risk(other, lo).unwrap();
    }
    let mut neutral = true;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let mut scores = BTreeMap::new();
        while scores.len() < n {
            scores.insert(rng.random_range(1..200), (rng.random_range(0..6) as f64) / 5.0);
        }
        let chosen = argmax_lowest_id(&scores).unwrap();
        let result = InterventionResult {
            episode: None,
            baseline: [0.3, 0.7],
            scores: scores.clone(),
            chosen,
            chosen_box: bbox(0.0, 0.0, 1.0, 1.0),
        };
        let looks = scores.keys().map(|k| (*k, NEUTRAL_LOOK)).collect();
        neutral &= rank_agents(&result, &looks, 1.0).unwrap()[0].track_id == chosen;
    }
    let pass = grid_ok && monotone && neutral;
    report(7, pass, &format!("grid exact {grid_ok}, monotone on 10000 pairs {monotone}, neutral argmax kept {neutral}"));
    assert!(pass);
}

#[test]
fn criterion_8_loss_analytics() {
    let ln2 = std::f64::consts::LN_2;
    let uniform = response_loss(&[(0.5, 0.5), (0.5, 0.5)], &[DriverResponse::Continue, DriverResponse::Alter]).unwrap();

    let labels = [DriverAction::LeftTurn, DriverAction::GoStraight, DriverAction::RightTurn];
    let one_hot = |a: DriverAction| {
        let mut v = vec![0.0; 3];
        v[a.index()] = 1.0;
        v
    };
    let prediction = ActionPrediction {
        frames: vec![1, 2, 3],
        p_act: labels.iter().map(|a| one_hot(*a)).collect(),
        h_e: vec![vec![0.0]; 3],
        future: (1..=3)
            .map(|frame: usize| (0..3).map(|i| one_hot(*labels.get(frame + i).unwrap_or(&labels[0]))).collect())
            .collect(),
    };
    let gamma = action_loss(&prediction, &labels).unwrap();

    let face = bbox(10.0, 10.0, 30.0, 30.0);
    let gts = [AttnGroundTruth { face_box: face, is_face: true, looking: Some(true) }];
    let anchor = |attn: f64| Anchor { bbox: face, objectness: 0.5, regression: [0.0; 4], attn };
    let cfg = |alpha: f64| AttnLossConfig::new(alpha, 0.5).unwrap();
    let l_attn = attention_loss(&[anchor(0.5)], &[Some(0)], &gts, &cfg(0.25)).unwrap().attn;
    let anchors = [anchor(0.3), Anchor { bbox: bbox(100.0, 100.0, 120.0, 120.0), objectness: 0.2, regression: [0.1, -0.2, 0.05, 0.3], attn: 0.9 }];
    let assignment = [Some(0), None];
    let total = |alpha| attention_loss(&anchors, &assignment, &gts, &cfg(alpha)).unwrap();
    let (l0, l1, l2) = (total(0.0), total(1.0), total(2.0));
    let affine = ((l1.total - l0.total) - (l2.total - l1.total)).abs() < 1e-12 && ((l1.total - l0.total) - l1.attn).abs() < 1e-12;

    let pass = (uniform - ln2).abs() <= 1e-9 && gamma == 0.0 && (l_attn - ln2).abs() <= 1e-9 && affine;
    report(8, pass, &format!(
        "uniform response loss {uniform:.12}, one-hot gamma {gamma}, L_attn {l_attn:.12}, affine in alpha {affine}"
    ));
    assert!(pass);
}

#[test]
fn criterion_9_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("world.toml"), "slots = 8\nd = 32\nn_agents_range = [2, 6]\n").unwrap();
    std::fs::write(
        p("train.toml"),
        "iterations = 20\nbatch_size = 4\nn_agents = 8\neval_every = 5\n[model]\nd = 32\nhidden = 8\nhead_hidden = 8\n[attention]\niterations = 20\n",
    )
    .unwrap();
    let run = |args: &[String]| riskid::cli::run(std::iter::once("riskid".to_string()).chain(args.iter().cloned()));
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut codes = Vec::new();
    codes.push(run(&s(&["gen", "--episodes", "16", "--seed", "5", "--config", &p("world.toml"), "--out", &p("train.jsonl")])));
    codes.push(run(&s(&["gen", "--episodes", "12", "--seed", "6", "--config", &p("world.toml"), "--out", &p("test.jsonl")])));
    for ck in ["a.ckpt", "b.ckpt"] {
        codes.push(run(&s(&["train", "--config", &p("train.toml"), "--data", &p("train.jsonl"), "--out", &p(ck)])));
    }
    for out in ["ea", "eb"] {
        codes.push(run(&s(&["eval", "--checkpoint", &p("a.ckpt"), "--data", &p("test.jsonl"), "--out", &p(out), "--baseline", "random"])));
    }
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap_or_default();
    let ckpt_same = !read("a.ckpt").is_empty() && read("a.ckpt") == read("b.ckpt");
    let csv_same = ["macc.csv", "ap.csv"].iter().all(|f| {
        let a = read(&format!("ea/{f}"));
        !a.is_empty() && a == read(&format!("eb/{f}"))
    });
    let pass = codes.iter().all(|c| *c == 0) && ckpt_same && csv_same;
    report(9, pass, &format!("exit codes {codes:?}, checkpoints identical {ckpt_same}, CSVs identical {csv_same}"));
    assert!(pass);
}

#[test]
fn criterion_10_icc() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let column: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..10.0)).collect();
    let identical = icc(&column.iter().map(|v| vec![*v, *v, *v]).collect::<Vec<_>>()).unwrap();

    let m = [[9i64, 2], [6, 1], [8, 4], [7, 1]];
    let (n, k) = (Ratio::from_integer(4i64), Ratio::from_integer(2i64));
    let one = Ratio::from_integer(1);
    let grand = m.iter().flatten().map(|v| Ratio::from_integer(*v)).sum::<Ratio<i64>>() / (n * k);
    let row: Vec<Ratio<i64>> = m.iter().map(|r| Ratio::new(r[0] + r[1], 2)).collect();
    let col: Vec<Ratio<i64>> = (0..2).map(|j| Ratio::new(m.iter().map(|r| r[j]).sum(), 4)).collect();
    let sq = |x: Ratio<i64>| x * x;
    let ss_r = k * row.iter().map(|r| sq(*r - grand)).sum::<Ratio<i64>>();
    let ss_c = n * col.iter().map(|c| sq(*c - grand)).sum::<Ratio<i64>>();
    let ss_t: Ratio<i64> = m.iter().flatten().map(|v| sq(Ratio::from_integer(*v) - grand)).sum();
    let ss_e = ss_t - ss_r - ss_c;
    let (msr, msc, mse) = (ss_r / (n - one), ss_c / (k - one), ss_e / ((n - one) * (k - one)));
    let expected = ratio_f64((msr - mse) / (msr + (k - one) * mse + k * (msc - mse) / n));
    let got = icc(&m.iter().map(|r| vec![r[0] as f64, r[1] as f64]).collect::<Vec<_>>()).unwrap();

    let pass = identical == 1.0 && (got - expected).abs() <= 1e-9;
    report(10, pass, &format!("identical columns {identical}, 4x2 matrix {got:.12} vs exact {expected:.12}"));
    assert!(pass);
}
