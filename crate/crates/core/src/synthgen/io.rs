//! Episode JSONL: one episode per line, with its `z`, `n` and `d` stated up
//! front so that shape mismatches are caught before validation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    validate_episode, AgentClass, BoundingBox, DriverAction, DriverResponse, Episode, Frame, RiskSituation,
};

/// Smallest body height, pixels, for a usable attention annotation.
const MIN_BODY_PX: f64 = 70.0;
/// Smallest face height, pixels, for a usable attention annotation.
const MIN_FACE_PX: f64 = 10.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    z: usize,
    n: usize,
    d: usize,
    frames: Vec<Frame>,
    response: DriverResponse,
    actions: Vec<DriverAction>,
    situation: RiskSituation,
    causal_id: Option<i64>,
    gt_box: Option<BoundingBox>,
}

pub fn episode_to_json(e: &Episode) -> String {
    let record = EpisodeRecord {
        z: e.z(),
        n: e.n(),
        d: e.d(),
        frames: e.frames.clone(),
        response: e.response,
        actions: e.actions.clone(),
        situation: e.situation,
        causal_id: e.causal_track_id,
        gt_box: e.gt_box,
    };
    serde_json::to_string(&record).expect("episode serializes")
}

/// Parses one line. `line` is 1-based and only used in error messages.
pub fn episode_from_json(text: &str, line: usize) -> Result<Episode> {
    let parse = |message: String| Error::Parse { line, message };
    let mut de = serde_json::Deserializer::from_str(text);
    let record: EpisodeRecord = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        parse(format!("field `{path}`: {}", e.inner()))
    })?;
    let episode = Episode {
        frames: record.frames,
        response: record.response,
        actions: record.actions,
        situation: record.situation,
        causal_track_id: record.causal_id,
        gt_box: record.gt_box,
    };
    for (field, stated, actual) in [("z", record.z, episode.z()), ("n", record.n, episode.n()), ("d", record.d, episode.d())] {
        if stated != actual {
            return Err(parse(format!("field `{field}`: states {stated} but the frames have {actual}")));
        }
    }
    let violations = validate_episode(&episode);
    if !violations.is_empty() {
        return Err(Error::Validation {
            index: line,
            violations: violations.iter().map(ToString::to_string).collect(),
        });
    }
    Ok(episode)
}

/// Parses JSONL text, skipping blank lines.
pub fn parse_jsonl(text: &str) -> Result<Vec<Episode>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| episode_from_json(l, i + 1))
        .collect()
}

/// Reads an annotation file in the episode JSONL format. Attention
/// annotations below the usable size limits are logged as warnings.
pub fn ingest_raid(path: &Path) -> Result<Vec<Episode>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let episode = episode_from_json(&line, i + 1)?;
        for w in attention_warnings(&episode) {
            log::warn!("{}:{}: {w}", path.display(), i + 1);
        }
        out.push(episode);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in episodes {
        writeln!(w, "{}", episode_to_json(e))?;
    }
    w.flush()?;
    Ok(())
}

/// Attention annotations whose body or face box is too small to be usable.
pub fn attention_warnings(e: &Episode) -> Vec<String> {
    let mut out = Vec::new();
    for f in &e.frames {
        for n in f.nodes.iter().filter(|n| n.class == AgentClass::Person) {
            let Some(a) = &n.attention else { continue };
            if a.body_box.height() <= MIN_BODY_PX {
                out.push(format!(
                    "frame {}, track {}: body box {:.1} px tall, below {MIN_BODY_PX} px",
                    f.t,
                    n.track_id,
                    a.body_box.height()
                ));
            }
            if let Some(face) = &a.face_box {
                if face.height() <= MIN_FACE_PX {
                    out.push(format!(
                        "frame {}, track {}: face box {:.1} px tall, below {MIN_FACE_PX} px",
                        f.t,
                        n.track_id,
                        face.height()
                    ));
                }
            }
        }
    }
    out
}
