use std::collections::BTreeMap;
use std::path::Path;

use crate::clock::Timestamp;
use crate::Detection;

pub const DEFAULT_PROMPT_CAP: usize = 2000;

const NO_OBJECTS: &str = "no objects";

/// `label xN (max C)` per label, sorted by label; "no objects" when empty.
pub fn summarize(detections: &[Detection]) -> String {
    let mut per_label: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for d in detections {
        let e = per_label.entry(d.label.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(d.confidence);
    }
    if per_label.is_empty() {
        return NO_OBJECTS.to_string();
    }
    per_label
        .iter()
        .map(|(label, (n, max))| format!("{label} x{n} (max {max:.2})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Text-only prompt; the snapshot image is never embedded.
pub fn build_prompt(
    _path: &Path,
    detections: &[Detection],
    timestamp: Timestamp,
    args_str: &str,
) -> String {
    format!(
        "You are a surveillance reporting assistant. At {}, the detector observed: {}. \
         System configuration: {}. Write one concise alert sentence for the operator.",
        timestamp.to_iso8601(),
        summarize(detections),
        args_str
    )
}

/// Cut `prompt` to at most `cap` characters.
pub fn cap_prompt(mut prompt: String, cap: usize) -> String {
    if let Some((idx, _)) = prompt.char_indices().nth(cap) {
        prompt.truncate(idx);
    }
    prompt
}
