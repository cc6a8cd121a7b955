//! Detector backends: recorded replays, scripted synthetic objects, and the
//! trait a real model adapter implements.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::flatfile::{parse_floats, FlatError, FlatFile};
use crate::{BBox, Detection};

/// One camera frame. `pixels` is absent for detection-only replay.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: u64,
    pub timestamp: Timestamp,
    pub width: u32,
    pub height: u32,
    pub pixels: Option<RgbImage>,
}

impl Frame {
    pub fn blank(index: u64, timestamp: Timestamp, width: u32, height: u32) -> Self {
        Frame {
            index,
            timestamp,
            width: width.max(1),
            height: height.max(1),
            pixels: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("detector failure: {0}")]
    Inference(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that turns frames into detections. Returned boxes must lie
/// within the frame.
pub trait DetectorBackend: Send {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, BackendError>;
    fn descriptor(&self) -> String;
}

fn clip_all(dets: &[Detection], frame: &Frame) -> Vec<Detection> {
    dets.iter()
        .filter_map(|d| {
            let bbox = d.bbox.clip(frame.width as f64, frame.height as f64);
            (!bbox.is_degenerate()).then(|| Detection {
                bbox,
                label: d.label.clone(),
                confidence: d.confidence,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedFrame {
    pub ts_ms: u64,
    pub detections: Vec<Detection>,
}

/// Parsed detections replay file, keyed by frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayRecording {
    pub frames: BTreeMap<u64, RecordedFrame>,
}

fn parse_err(line: usize, message: impl Into<String>) -> BackendError {
    BackendError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_detection(token: &str, line: usize) -> Result<Detection, BackendError> {
    let parts: Vec<&str> = token.split(':').collect();
    if parts.len() != 6 {
        return Err(parse_err(
            line,
            format!("detection {token:?} must be label:conf:x1:y1:x2:y2"),
        ));
    }
    let num = |s: &str, what: &str| -> Result<f64, BackendError> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("bad {what} {s:?} in {token:?}")))
    };
    let conf = num(parts[1], "confidence")?;
    let bbox = BBox::new(
        num(parts[2], "x1")?,
        num(parts[3], "y1")?,
        num(parts[4], "x2")?,
        num(parts[5], "y2")?,
    )
    .map_err(|e| parse_err(line, e.to_string()))?;
    Detection::new(bbox, parts[0], conf).map_err(|e| parse_err(line, e.to_string()))
}

fn field(token: Option<&str>, name: &str, line: usize) -> Result<u64, BackendError> {
    let token = token.ok_or_else(|| parse_err(line, format!("missing {name}=")))?;
    let value = token
        .strip_prefix(name)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| parse_err(line, format!("expected {name}=<n>, got {token:?}")))?;
    value
        .parse()
        .map_err(|_| parse_err(line, format!("bad {name} value {value:?}")))
}

impl ReplayRecording {
    /// `frame=<n> ts=<ms> [label:conf:x1:y1:x2:y2 ...]`, one frame per line.
    /// The detection list may be written bare or wrapped in square brackets.
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut rec = ReplayRecording::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut tokens = trimmed.split_whitespace();
            let frame = field(tokens.next(), "frame", line)?;
            let ts_ms = field(tokens.next(), "ts", line)?;
            let rest: Vec<&str> = tokens.collect();
            let mut joined = rest.join(" ");
            if joined.starts_with('[') {
                if !joined.ends_with(']') {
                    return Err(parse_err(line, "unterminated detection list"));
                }
                joined = joined[1..joined.len() - 1].to_string();
            }
            let detections = joined
                .split_whitespace()
                .map(|t| parse_detection(t, line))
                .collect::<Result<Vec<_>, _>>()?;
            if rec
                .frames
                .insert(frame, RecordedFrame { ts_ms, detections })
                .is_some()
            {
                return Err(parse_err(line, format!("duplicate frame {frame}")));
            }
        }
        Ok(rec)
    }

    /// Canonical text form: bare detection lists, ascending frames.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (idx, f) in &self.frames {
            let _ = write!(out, "frame={idx} ts={}", f.ts_ms);
            for d in &f.detections {
                let b = d.bbox;
                let _ = write!(
                    out,
                    " {}:{}:{}:{}:{}:{}",
                    d.label, d.confidence, b.x1, b.y1, b.x2, b.y2
                );
            }
            out.push('\n');
        }
        out
    }
}

/// Plays back a recording by frame index; past the end it sees nothing.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    recording: ReplayRecording,
    name: String,
}

impl ReplayBackend {
    pub fn new(recording: ReplayRecording, name: impl Into<String>) -> Self {
        ReplayBackend {
            recording,
            name: name.into(),
        }
    }

    pub fn recording(&self) -> &ReplayRecording {
        &self.recording
    }
}

/// Load a detections replay file.
pub fn replay_backend(path: &Path) -> Result<ReplayBackend, BackendError> {
    let text = std::fs::read_to_string(path)?;
    let recording = ReplayRecording::parse(&text)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ReplayBackend::new(recording, name))
}

impl DetectorBackend for ReplayBackend {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        Ok(self
            .recording
            .frames
            .get(&frame.index)
            .map(|f| clip_all(&f.detections, frame))
            .unwrap_or_default())
    }

    fn descriptor(&self) -> String {
        format!("replay:{}", self.name)
    }
}

/// One scripted object: present on frames `start..=end`, moving linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub label: String,
    pub start_frame: u64,
    pub end_frame: u64,
    pub bbox: BBox,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub confidence: f64,
}

impl Trajectory {
    pub fn stationary(label: &str, start_frame: u64, end_frame: u64, bbox: BBox) -> Self {
        Trajectory {
            name: label.to_string(),
            label: label.to_string(),
            start_frame,
            end_frame,
            bbox,
            velocity: (0.0, 0.0),
            confidence: 0.9,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.end_frame < self.start_frame {
            return Err(BackendError::InvalidScript(format!(
                "{}: end frame {} before start frame {}",
                self.name, self.end_frame, self.start_frame
            )));
        }
        if self.bbox.is_degenerate() {
            return Err(BackendError::InvalidScript(format!(
                "{}: zero-area box",
                self.name
            )));
        }
        if self.label.is_empty() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(BackendError::InvalidScript(format!(
                "{}: needs a label and a confidence in [0,1]",
                self.name
            )));
        }
        Ok(())
    }

    fn box_at(&self, index: u64) -> BBox {
        let k = (index - self.start_frame) as f64;
        self.bbox.translate(self.velocity.0 * k, self.velocity.1 * k)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticScript {
    pub objects: Vec<Trajectory>,
    /// Probability that an active object is missed on a given frame.
    pub dropout: f64,
    pub seed: u64,
}

const OBJECT_FIELDS: [&str; 6] = ["label", "start", "end", "box", "velocity", "confidence"];

impl SyntheticScript {
    /// Read `object.<name>.<field>` entries from a flat file.
    pub fn from_flat(file: &FlatFile) -> Result<Vec<Trajectory>, FlatError> {
        let mut names: Vec<String> = Vec::new();
        for e in file.with_prefix("object") {
            let rest = &e.key["object.".len()..];
            let Some((name, fieldname)) = rest.split_once('.') else {
                return Err(FlatError::invalid(&e.key, "expected object.<name>.<field>"));
            };
            if !OBJECT_FIELDS.contains(&fieldname) {
                return Err(FlatError::invalid(&e.key, "unknown object field"));
            }
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
        let mut out = Vec::new();
        for name in names {
            let key = |f: &str| format!("object.{name}.{f}");
            let label = file
                .get(&key("label"))
                .ok_or_else(|| FlatError::invalid(key("label"), "missing"))?
                .to_string();
            let start: u64 = file.parse_or(&key("start"), 0)?;
            let end: u64 = file
                .parse_opt(&key("end"))?
                .ok_or_else(|| FlatError::invalid(key("end"), "missing"))?;
            let b = parse_floats(
                &key("box"),
                file.get(&key("box"))
                    .ok_or_else(|| FlatError::invalid(key("box"), "missing"))?,
                4,
            )?;
            let bbox = BBox::new(b[0], b[1], b[2], b[3])
                .map_err(|e| FlatError::invalid(key("box"), e.to_string()))?;
            let velocity = match file.get(&key("velocity")) {
                Some(v) => {
                    let v = parse_floats(&key("velocity"), v, 2)?;
                    (v[0], v[1])
                }
                None => (0.0, 0.0),
            };
            let confidence: f64 = file.parse_or(&key("confidence"), 0.9)?;
            let t = Trajectory {
                name: name.clone(),
                label,
                start_frame: start,
                end_frame: end,
                bbox,
                velocity,
                confidence,
            };
            t.validate()
                .map_err(|e| FlatError::invalid(format!("object.{name}"), e.to_string()))?;
            out.push(t);
        }
        Ok(out)
    }
}

/// Scripted detector with optional seeded dropout.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    script: SyntheticScript,
}

/// Validate `script` and wrap it as a backend.
pub fn synthetic_backend(script: SyntheticScript) -> Result<SyntheticBackend, BackendError> {
    for t in &script.objects {
        t.validate()?;
    }
    if !(0.0..=1.0).contains(&script.dropout) {
        return Err(BackendError::InvalidScript(format!(
            "dropout {} outside [0,1]",
            script.dropout
        )));
    }
    Ok(SyntheticBackend { script })
}

impl DetectorBackend for SyntheticBackend {
    fn detect(&mut self, frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        // Seeded per frame so results do not depend on call history.
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.script.seed ^ frame.index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut out = Vec::new();
        for t in &self.script.objects {
            if frame.index < t.start_frame || frame.index > t.end_frame {
                continue;
            }
            if self.script.dropout > 0.0 && rng.random::<f64>() < self.script.dropout {
                continue;
            }
            let bbox = t.box_at(frame.index).clip(frame.width as f64, frame.height as f64);
            if bbox.is_degenerate() {
                continue;
            }
            out.push(Detection {
                bbox,
                label: t.label.clone(),
                confidence: t.confidence,
            });
        }
        Ok(out)
    }

    fn descriptor(&self) -> String {
        format!("synthetic:{}-objects", self.script.objects.len())
    }
}

/// Placeholder for a real model adapter named in the config; it reports an
/// inference error on every frame until a concrete backend is plugged in.
#[derive(Debug, Clone)]
pub struct UnavailableBackend {
    pub descriptor: String,
}

impl DetectorBackend for UnavailableBackend {
    fn detect(&mut self, _frame: &Frame) -> Result<Vec<Detection>, BackendError> {
        Err(BackendError::Inference(format!(
            "no inference runtime linked for {}",
            self.descriptor
        )))
    }

    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: u64) -> Frame {
        Frame::blank(i, Timestamp(i * 100), 640, 480)
    }

    const THREE: &str = "\
# recorded
frame=0 ts=0 person:0.9:10:10:50:80
frame=1 ts=100 [person:0.91:12:10:52:80 car:0.5:100:100:300:200]
frame=2 ts=200
";

    #[test]
    fn replay_returns_recorded_frames() {
        let mut b = ReplayBackend::new(ReplayRecording::parse(THREE).unwrap(), "t");
        let d = b.detect(&frame(1)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[1].label, "car");
        assert_eq!(d[0].bbox, BBox::new(12., 10., 52., 80.).unwrap());
        assert!(b.detect(&frame(2)).unwrap().is_empty());
        assert!(b.detect(&frame(99)).unwrap().is_empty());
    }

    #[test]
    fn replay_clips_to_frame() {
        let rec = ReplayRecording::parse("frame=0 ts=0 car:0.8:600:400:700:500").unwrap();
        let mut b = ReplayBackend::new(rec, "t");
        let d = b.detect(&frame(0)).unwrap();
        assert_eq!(d[0].bbox, BBox::new(600., 400., 640., 480.).unwrap());
    }

    #[test]
    fn replay_parse_error_carries_line() {
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!("frame={i} ts={}\n", i * 100));
        }
        text.push_str("frame=6 ts=600 person:high:1:1:2:2\n");
        match ReplayRecording::parse(&text) {
            Err(BackendError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        for bad in [
            "ts=0",
            "frame=1",
            "frame=x ts=0",
            "frame=1 ts=0 person:0.5:1:1:2",
            "frame=1 ts=0 person:1.5:1:1:2:2",
            "frame=1 ts=0 person:0.5:3:1:2:2",
            "frame=1 ts=0 [person:0.5:1:1:2:2",
            "frame=1 ts=0\nframe=1 ts=5",
        ] {
            assert!(ReplayRecording::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn canonical_text_reparses() {
        let rec = ReplayRecording::parse(THREE).unwrap();
        assert_eq!(ReplayRecording::parse(&rec.to_text()).unwrap(), rec);
    }

    fn script(objects: Vec<Trajectory>, dropout: f64, seed: u64) -> SyntheticScript {
        SyntheticScript {
            objects,
            dropout,
            seed,
        }
    }

    #[test]
    fn static_object_keeps_its_box() {
        let bbox = BBox::new(10., 10., 60., 90.).unwrap();
        let mut b =
            synthetic_backend(script(vec![Trajectory::stationary("person", 0, 100, bbox)], 0.0, 0))
                .unwrap();
        for i in 0..=100 {
            assert_eq!(b.detect(&frame(i)).unwrap()[0].bbox, bbox);
        }
        assert!(b.detect(&frame(101)).unwrap().is_empty());
    }

    #[test]
    fn moving_object_advances_linearly() {
        let mut t = Trajectory::stationary("car", 3, 50, BBox::new(0., 0., 40., 20.).unwrap());
        t.velocity = (5.0, 0.0);
        let mut b = synthetic_backend(script(vec![t], 0.0, 0)).unwrap();
        assert!(b.detect(&frame(2)).unwrap().is_empty());
        let x: Vec<f64> = (3..8).map(|i| b.detect(&frame(i)).unwrap()[0].bbox.x1).collect();
        assert_eq!(x, vec![0., 5., 10., 15., 20.]);
    }

    #[test]
    fn object_leaving_frame_is_clipped_then_gone() {
        let mut t = Trajectory::stationary("car", 0, 100, BBox::new(600., 0., 630., 20.).unwrap());
        t.velocity = (20.0, 0.0);
        let mut b = synthetic_backend(script(vec![t], 0.0, 0)).unwrap();
        assert_eq!(b.detect(&frame(1)).unwrap()[0].bbox.x2, 640.);
        assert!(b.detect(&frame(2)).unwrap().is_empty());
    }

    #[test]
    fn dropout_is_deterministic() {
        let objs: Vec<_> = (0..4)
            .map(|k| {
                Trajectory::stationary(
                    "person",
                    0,
                    200,
                    BBox::new(k as f64 * 100., 0., k as f64 * 100. + 50., 50.).unwrap(),
                )
            })
            .collect();
        let run = || {
            let mut b = synthetic_backend(script(objs.clone(), 0.5, 42)).unwrap();
            (0..200).map(|i| b.detect(&frame(i)).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let seen: usize = a.iter().map(|d| d.len()).sum();
        assert!(seen > 200 && seen < 600, "{seen}");
    }

    #[test]
    fn invalid_scripts_rejected() {
        let good = BBox::new(0., 0., 1., 1.).unwrap();
        let mut t = Trajectory::stationary("x", 5, 4, good);
        assert!(synthetic_backend(script(vec![t.clone()], 0.0, 0)).is_err());
        t.end_frame = 6;
        t.bbox = BBox::new(1., 1., 1., 5.).unwrap();
        assert!(matches!(
            synthetic_backend(script(vec![t], 0.0, 0)),
            Err(BackendError::InvalidScript(_))
        ));
    }

    #[test]
    fn script_from_flat_file() {
        let f = FlatFile::parse(
            "object.walker.label = person\nobject.walker.end = 10\nobject.walker.box = 1,2,30,40\n\
             object.walker.velocity = 1.5,0\nobject.bike.label = bicycle\nobject.bike.start = 2\n\
             object.bike.end = 3\nobject.bike.box = 0,0,5,5\nobject.bike.confidence = 0.6\n",
        )
        .unwrap();
        let objs = SyntheticScript::from_flat(&f).unwrap();
        assert_eq!(objs.len(), 2);
        assert_eq!(objs[0].velocity, (1.5, 0.0));
        assert_eq!(objs[1].start_frame, 2);
        assert_eq!(objs[1].confidence, 0.6);
        let bad = FlatFile::parse("object.a.label = x\nobject.a.end = 1\nobject.a.box = 0,0,0,0").unwrap();
        assert!(SyntheticScript::from_flat(&bad).is_err());
        let unknown = FlatFile::parse("object.a.colour = red").unwrap();
        assert!(SyntheticScript::from_flat(&unknown).is_err());
    }
}
