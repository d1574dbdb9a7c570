//! Joint training of the relation graph, action predictor and response head,
//! a separate recipe for the attention classifier, evaluation and
//! checkpoints.
//!
//! Every source of randomness is derived from the configured seed: the
//! initial parameters from stream 0, the minibatch of iteration `k` from its
//! own stream `k`. Resuming from a checkpoint therefore continues exactly
//! where an uninterrupted run would be.

mod checkpoint;
pub mod optim;

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskid_tape::{Mat, Tape};
use serde::{Deserialize, Serialize};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use optim::{AdamW, SgdMomentum};

use crate::actionnet::{action_loss_on_tape, predict_action};
use crate::attention::{attention_samples, classifier_loss_on_tape, AttentionClassifier};
use crate::error::{Error, Result};
use crate::intervene::{forward_on_tape, identify_risk_object, predict_response, selectors};
use crate::intervene::{InterventionResult, ModelConfig, RiskModel};
use crate::metrics::{class_average_precision, macc, random_baseline, ApRow, EvalRecord, MaccReport};
use crate::params::collect_grads;
use crate::types::{DriverAction, DriverResponse, Episode};

const DATA_SALT: u64 = 0xBA7C_0DE5;
const ATTENTION_SALT: u64 = 0xA77E_0001;

/// Optimiser settings of the attention classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for AttentionTrainConfig {
    fn default() -> Self {
        Self { iterations: 500, batch_size: 16, learning_rate: 0.01, momentum: 0.9, weight_decay: 5e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Frames per episode.
    pub z: usize,
    /// Node slots per frame.
    pub n_agents: usize,
    pub seed: u64,
    pub response_weight: f64,
    pub action_weight: f64,
    /// Iterations between loss records.
    pub eval_every: usize,
    pub model: ModelConfig,
    pub attention: AttentionTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 16,
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            z: 3,
            n_agents: 25,
            seed: 0,
            response_weight: 1.0,
            action_weight: 1.0,
            eval_every: 100,
            model: ModelConfig::default(),
            attention: AttentionTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        let m = &self.model;
        if self.batch_size == 0 || self.eval_every == 0 || self.z == 0 || self.n_agents < 2 {
            return fail("batch_size, eval_every and z must be positive and n_agents at least 2");
        }
        if m.d == 0 || m.hidden == 0 || m.head_hidden == 0 || m.p_e == 0 || m.p_d == 0 || m.gcn_layers == 0 {
            return fail("model dimensions must be positive");
        }
        crate::cells::cells().get(&m.cell)?;
        for (name, v) in [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.learning_rate == 0.0 {
            return fail("learning_rate must be positive");
        }
        let w = (self.response_weight, self.action_weight);
        if !(w.0.is_finite() && w.1.is_finite() && w.0 >= 0.0 && w.1 >= 0.0 && w.0 + w.1 > 0.0) {
            return fail("loss weights must be finite, non-negative and not both zero");
        }
        let a = &self.attention;
        if a.batch_size == 0 || !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return fail("attention batch_size and learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&a.momentum) || !(a.weight_decay >= 0.0 && a.weight_decay.is_finite()) {
            return fail("attention momentum must lie in [0, 1) and weight_decay be >= 0");
        }
        Ok(())
    }

    /// Checks that every episode has the configured shape.
    pub fn check_episodes(&self, episodes: &[Episode]) -> Result<()> {
        for (i, e) in episodes.iter().enumerate() {
            let found = (e.z(), e.n(), e.d());
            let expected = (self.z, self.n_agents, self.model.d);
            if found != expected {
                return Err(Error::Config(format!(
                    "episode {i} has (z, n, d) = {found:?}, the configuration expects {expected:?}"
                )));
            }
        }
        Ok(())
    }
}

/// The attention classifier and its optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub classifier: AttentionClassifier,
    pub optimizer: SgdMomentum,
    pub iteration: usize,
}

/// Everything needed to evaluate or resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimiser updates applied to the model.
    pub iteration: usize,
    pub model: RiskModel,
    pub optimizer: AdamW,
    pub attention: Option<AttentionHead>,
}

impl Checkpoint {
    /// Freshly initialised parameters for `config`.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = RiskModel::init(&mut rng, &config.model)?;
        let optimizer = AdamW::new(&model, config.learning_rate, config.weight_decay);
        Ok(Self { config: config.clone(), iteration: 0, model, optimizer, attention: None })
    }
}

/// Mean losses over the iterations since the previous record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub response_loss: f64,
    pub action_loss: f64,
    pub total: f64,
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("iteration,response_loss,action_loss,total\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.response_loss, r.action_loss, r.total);
    }
    out
}

fn batch_indices(seed: u64, salt: u64, iteration: usize, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(iteration as u64);
    index::sample(&mut rng, n, batch.min(n)).into_vec()
}

/// Weighted loss of one episode and its gradients in parameter order.
/// Returns `(response_loss, action_loss, gradients)`.
pub fn episode_gradients(
    model: &RiskModel,
    episode: &Episode,
    response_weight: f64,
    action_weight: f64,
) -> Result<(f64, f64, Vec<Mat>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let fwd = forward_on_tape(&mut tape, model, &vars, episode)?;
    let response = tape.softmax_cross_entropy(fwd.logits, episode.response.index());
    let mut total = tape.scale(response, response_weight);
    let mut action = 0.0;
    if !fwd.action.is_empty() {
        let a = action_loss_on_tape(&mut tape, &fwd.action, &episode.actions)?;
        action = tape.scalar(a);
        let weighted = tape.scale(a, action_weight);
        total = tape.add(total, weighted);
    }
    let response = tape.scalar(response);
    let grads = tape.backward(total);
    Ok((response, action, collect_grads(model, &vars, &grads)))
}

/// Trains from scratch: the model for `config.iterations` updates, then the
/// attention classifier on the pedestrians with an attention label.
pub fn train(config: &TrainConfig, episodes: &[Episode]) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let mut ckpt = Checkpoint::init(config)?;
    let records = run(&mut ckpt, episodes, config.iterations)?;
    train_attention(&mut ckpt, episodes)?;
    Ok((ckpt, records))
}

/// Continues model training for `iterations` more updates.
pub fn resume(mut ckpt: Checkpoint, episodes: &[Episode], iterations: usize) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let records = run(&mut ckpt, episodes, iterations)?;
    Ok((ckpt, records))
}

fn run(ckpt: &mut Checkpoint, episodes: &[Episode], iterations: usize) -> Result<Vec<LossRecord>> {
    if episodes.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let cfg = ckpt.config.clone();
    cfg.check_episodes(episodes)?;
    let mut records = Vec::new();
    let (mut sum_r, mut sum_a, mut sum_t, mut count) = (0.0, 0.0, 0.0, 0usize);
    let first = ckpt.iteration + 1;
    let last = ckpt.iteration + iterations;
    for it in first..=last {
        let batch = batch_indices(cfg.seed, DATA_SALT, it, episodes.len(), cfg.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut acc: Option<Vec<Mat>> = None;
        let (mut lr, mut la) = (0.0, 0.0);
        for &i in &batch {
            let (r, a, g) = episode_gradients(&ckpt.model, &episodes[i], cfg.response_weight, cfg.action_weight)?;
            lr += r * scale;
            la += a * scale;
            match &mut acc {
                None => acc = Some(g.into_iter().map(|m| m * scale).collect()),
                Some(sum) => sum.iter_mut().zip(&g).for_each(|(s, m)| s.scaled_add(scale, m)),
            }
        }
        let total = cfg.response_weight * lr + cfg.action_weight * la;
        let grads = acc.expect("nonempty batch");
        if !total.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                iteration: it,
                detail: format!("non-finite loss {total} on batch of episodes {batch:?}"),
            });
        }
        ckpt.optimizer.update(&mut ckpt.model, &grads);
        ckpt.iteration = it;
        sum_r += lr;
        sum_a += la;
        sum_t += total;
        count += 1;
        if it % cfg.eval_every == 0 || it == last {
            let n = count as f64;
            records.push(LossRecord {
                iteration: it,
                response_loss: sum_r / n,
                action_loss: sum_a / n,
                total: sum_t / n,
            });
            log::info!("iteration {it}: loss {:.5}", sum_t / n);
            (sum_r, sum_a, sum_t, count) = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(records)
}

/// Fits the attention classifier with momentum SGD. Leaves the checkpoint
/// without an attention head when no episode carries usable labels.
pub fn train_attention(ckpt: &mut Checkpoint, episodes: &[Episode]) -> Result<()> {
    let samples = attention_samples(episodes);
    let Some((first, _)) = samples.first() else {
        return Ok(());
    };
    let cfg = ckpt.config.attention.clone();
    let mut head = match ckpt.attention.take() {
        Some(h) => h,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
            rng.set_stream(1);
            let classifier = AttentionClassifier::init(&mut rng, first.len());
            let optimizer = SgdMomentum::new(&classifier, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
            AttentionHead { classifier, optimizer, iteration: 0 }
        }
    };
    for it in head.iteration + 1..=head.iteration + cfg.iterations {
        let batch = batch_indices(ckpt.config.seed, ATTENTION_SALT, it, samples.len(), cfg.batch_size);
        let mut tape = Tape::new();
        let vars = head.classifier.bind(&mut tape);
        let mut total = None;
        for &i in &batch {
            let (feature, looking) = &samples[i];
            let l = classifier_loss_on_tape(&mut tape, vars.clone(), feature, *looking);
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l),
            });
        }
        let mean = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f64);
        if !tape.scalar(mean).is_finite() {
            return Err(Error::Divergence { iteration: it, detail: "non-finite attention loss".into() });
        }
        let grads = tape.backward(mean);
        let g = collect_grads(&head.classifier, &vars, &grads);
        head.optimizer.update(&mut head.classifier, &g);
        head.iteration = it;
    }
    ckpt.attention = Some(head);
    Ok(())
}

/// Evaluation of a checkpoint on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Localisation accuracy of the intervention choice.
    pub macc: MaccReport,
    /// Localisation accuracy of uniformly random choices.
    pub random: MaccReport,
    /// Percent of scored episodes whose chosen track is the causal one.
    pub causal_accuracy: f64,
    pub random_causal_accuracy: f64,
    pub ap: ApRow,
    /// Intervention outcomes of the scored episodes, by test-set index.
    pub results: Vec<InterventionResult>,
}

fn ap_or_nan(r: Result<f64>) -> f64 {
    r.map_or(f64::NAN, |v| 100.0 * v)
}

/// Scores every `Alter` episode with a ground-truth box by intervention and
/// by random selection (seeded with `baseline_seed`), and computes response
/// and action AP over all episodes.
pub fn evaluate(ckpt: &Checkpoint, episodes: &[Episode], baseline_seed: u64) -> Result<EvalReport> {
    for e in episodes {
        ckpt.model.check(e.d())?;
    }
    let scored: Vec<usize> = (0..episodes.len())
        .filter(|&i| episodes[i].response == DriverResponse::Alter && episodes[i].gt_box.is_some())
        .collect();
    if scored.is_empty() {
        return Err(Error::InvalidInput("no Alter episodes with a ground-truth box to score".into()));
    }
    let mut records = Vec::new();
    let mut results = Vec::new();
    let mut hits = 0usize;
    for &i in &scored {
        let e = &episodes[i];
        let mut r = identify_risk_object(e, &ckpt.model)?;
        r.episode = Some(i);
        hits += (Some(r.chosen) == e.causal_track_id) as usize;
        records.push(EvalRecord {
            episode: i,
            predicted: r.chosen_box,
            truth: e.gt_box.expect("scored episodes have a box"),
            situation: e.situation,
        });
        results.push(r);
    }
    let alter: Vec<Episode> = scored.iter().map(|&i| episodes[i].clone()).collect();
    let random = random_baseline(&alter, baseline_seed)?;
    // Same seed and draw order as the random localisation records.
    let mut rng = ChaCha8Rng::seed_from_u64(baseline_seed);
    let picker = selectors().get("random")?;
    let mut random_hits = 0usize;
    for e in &alter {
        random_hits += (Some(picker.choose(e, &ckpt.model, &mut rng)?) == e.causal_track_id) as usize;
    }

    let mut response_scores = Vec::new();
    let mut response_labels = Vec::new();
    for e in episodes {
        let (c, a) = predict_response(e, &ckpt.model)?;
        response_scores.push(vec![c, a]);
        response_labels.push(e.response.index());
    }
    let response = [0, 1].map(|c| ap_or_nan(class_average_precision(&response_scores, &response_labels, c)));
    let action = match &ckpt.model.action {
        Some(params) => {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for e in episodes {
                let p = predict_action(e, params)?;
                for (frame, probs) in p.frames.iter().zip(&p.p_act) {
                    scores.push(probs.clone());
                    labels.push(e.actions[frame - 1].index());
                }
            }
            let ap = |a: DriverAction| ap_or_nan(class_average_precision(&scores, &labels, a.index()));
            Some([ap(DriverAction::LeftTurn), ap(DriverAction::RightTurn), ap(DriverAction::GoStraight)])
        }
        None => None,
    };
    let macc = macc(&records)?;
    let n = scored.len() as f64;
    Ok(EvalReport {
        ap: ApRow {
            method: if ckpt.model.action.is_some() { "intervention+action" } else { "intervention" }.into(),
            action,
            response,
            macc: macc.average.macc,
        },
        macc,
        random,
        causal_accuracy: 100.0 * hits as f64 / n,
        random_causal_accuracy: 100.0 * random_hits as f64 / n,
        results,
    })
}
