//! Annotated PNG snapshots: boxes, labels, confidences and track ids.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use super::backend::Frame;
use crate::{Detection, TrackerState};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("cannot create snapshot directory {path}: {source}")]
    Dir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write snapshot {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Directory every snapshot of a run lives in. Paths handed around in
/// events are relative to it.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    dir: PathBuf,
}

impl SnapshotStore {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, SnapshotError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| SnapshotError::Dir {
            path: dir.clone(),
            source,
        })?;
        Ok(SnapshotStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.dir.join(relative)
    }

    pub fn file_name(frame_index: u64, track_id: u64) -> PathBuf {
        PathBuf::from(format!("snap_{frame_index}_{track_id}.png"))
    }

    /// Render and write the snapshot for `track_id`; returns its relative path.
    pub fn save(
        &self,
        frame: &Frame,
        detections: &[Detection],
        tracks: &TrackerState,
        track_id: u64,
    ) -> Result<PathBuf, SnapshotError> {
        let rel = Self::file_name(frame.index, track_id);
        let full = self.resolve(&rel);
        let img = render(frame, detections, tracks, track_id);
        img.save_with_format(&full, image::ImageFormat::Png)
            .map_err(|e| SnapshotError::Io {
                path: full.clone(),
                message: e.to_string(),
            })?;
        Ok(rel)
    }
}

const BACKGROUND: Rgb<u8> = Rgb([24, 24, 28]);
const HIGHLIGHT: Rgb<u8> = Rgb([230, 40, 40]);
const TEXT_SCALE: u32 = 2;

fn label_colour(label: &str) -> Rgb<u8> {
    let h = label
        .bytes()
        .fold(2166136261u32, |h, b| (h ^ b as u32).wrapping_mul(16777619));
    Rgb([
        96 + (h & 0x7f) as u8,
        96 + ((h >> 8) & 0x7f) as u8,
        96 + ((h >> 16) & 0x7f) as u8,
    ])
}

/// Draw onto the frame's pixels, or a blank canvas of the frame's size.
pub fn render(frame: &Frame, detections: &[Detection], tracks: &TrackerState, highlight: u64) -> RgbImage {
    let mut img = match &frame.pixels {
        Some(p) if p.width() == frame.width && p.height() == frame.height => p.clone(),
        _ => RgbImage::from_pixel(frame.width, frame.height, BACKGROUND),
    };
    for det in detections {
        let track = tracks
            .tracks
            .iter()
            .find(|t| t.lost_count == 0 && t.bbox == det.bbox);
        let colour = match track {
            Some(t) if t.id == highlight => HIGHLIGHT,
            _ => label_colour(&det.label),
        };
        let b = det.bbox;
        let (x1, y1) = (b.x1.floor() as i64, b.y1.floor() as i64);
        let (x2, y2) = (b.x2.ceil() as i64 - 1, b.y2.ceil() as i64 - 1);
        draw_rect(&mut img, x1, y1, x2, y2, colour, 2);
        let mut caption = format!("{} {:.2}", det.label, det.confidence);
        if let Some(t) = track {
            caption.push_str(&format!(" #{}", t.id));
        }
        let glyph_h = 5 * TEXT_SCALE as i64;
        let ty = if y1 - glyph_h - 2 >= 0 { y1 - glyph_h - 2 } else { y1 + 3 };
        draw_text(&mut img, x1 + 1, ty, &caption, colour);
    }
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_rect(img: &mut RgbImage, x1: i64, y1: i64, x2: i64, y2: i64, c: Rgb<u8>, thickness: i64) {
    for t in 0..thickness {
        for x in x1..=x2 {
            put(img, x, y1 + t, c);
            put(img, x, y2 - t, c);
        }
        for y in y1..=y2 {
            put(img, x1 + t, y, c);
            put(img, x2 - t, y, c);
        }
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, c: Rgb<u8>) {
    let s = TEXT_SCALE as i64;
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let ox = x + i as i64 * 4 * s;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..3 {
                if bits & (0b100 >> rx) != 0 {
                    for dy in 0..s {
                        for dx in 0..s {
                            put(img, ox + rx * s + dx, y + ry as i64 * s + dy, c);
                        }
                    }
                }
            }
        }
    }
}

/// 3x5 bitmap glyphs; unknown characters render as a filled block.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b001, 0b001],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'J' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'K' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'N' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'O' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'Q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'V' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'X' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'Y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'Z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '.' => [0, 0, 0, 0, 0b010],
        ':' => [0, 0b010, 0, 0b010, 0],
        '#' => [0b101, 0b111, 0b101, 0b111, 0b101],
        '-' => [0, 0, 0b111, 0, 0],
        '_' => [0, 0, 0, 0, 0b111],
        ' ' => [0; 5],
        _ => [0b111; 5],
    }
}
