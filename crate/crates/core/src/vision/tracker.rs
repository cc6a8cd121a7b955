//! Passive IoU tracker and dwell-time triggers.
//!
//! Tracks are matched greedily in creation order against the detections
//! still unclaimed in the current frame. There is no motion model: an
//! unmatched track keeps its last box and ages by one lost frame.

use std::collections::BTreeSet;
use std::time::Duration;

use thiserror::Error;

use super::geometry::{iou, BBox, Detection};
use crate::clock::Timestamp;
use crate::scalar::Scalar;

pub const DEFAULT_THETA: f64 = 0.3;
pub const DEFAULT_L_MAX: u32 = 10;
pub const DEFAULT_DWELL: Duration = Duration::from_secs(5);
pub const DEFAULT_COOLDOWN: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerConfigError {
    #[error("theta must lie strictly between 0 and 1, got {0}")]
    Theta(f64),
    #[error("l_max must be at least 1")]
    LMax,
    #[error("dwell must be positive")]
    Dwell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig<T> {
    /// IoU a track must strictly exceed to adopt a detection.
    pub theta: T,
    /// A track is evicted once its lost counter reaches this value.
    pub l_max: u32,
    pub dwell: Duration,
    pub cooldown: Duration,
    pub target_labels: BTreeSet<String>,
}

impl<T: Scalar> TrackerConfig<T> {
    pub fn validate(&self) -> Result<(), TrackerConfigError> {
        if !(self.theta > T::zero() && self.theta < T::one()) {
            return Err(TrackerConfigError::Theta(self.theta.to_f64_lossy()));
        }
        if self.l_max == 0 {
            return Err(TrackerConfigError::LMax);
        }
        if self.dwell.is_zero() {
            return Err(TrackerConfigError::Dwell);
        }
        Ok(())
    }
}

impl<T: Scalar> Default for TrackerConfig<T> {
    fn default() -> Self {
        TrackerConfig {
            theta: T::from_f64_lossy(DEFAULT_THETA),
            l_max: DEFAULT_L_MAX,
            dwell: DEFAULT_DWELL,
            cooldown: DEFAULT_COOLDOWN,
            target_labels: ["person".to_string()].into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub id: u64,
    pub bbox: BBox<T>,
    pub label: String,
    pub lost_count: u32,
    pub first_seen: Timestamp,
    pub last_matched: Timestamp,
    pub last_reported: Option<Timestamp>,
}

/// A track that adopted a detection during the last update.
#[derive(Debug, Clone, PartialEq)]
pub struct Match<T> {
    pub track_id: u64,
    pub detection: Detection<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState<T> {
    /// Creation order, which is also ascending id order.
    pub tracks: Vec<Track<T>>,
    /// Id handed to the next new track; always above every id issued so far.
    pub next_id: u64,
}

impl<T> Default for TrackerState<T> {
    fn default() -> Self {
        TrackerState {
            tracks: Vec::new(),
            next_id: 1,
        }
    }
}

impl<T: Scalar> TrackerState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u64) -> Option<&Track<T>> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn update(
        &mut self,
        detections: &[Detection<T>],
        cfg: &TrackerConfig<T>,
        now: Timestamp,
    ) -> Vec<Match<T>> {
        passive_tracker_update(self, detections, cfg, now)
    }
}

/// Index and score of the best unclaimed detection for `bbox`.
/// Ties keep the lowest index.
fn best_unclaimed<T: Scalar>(
    bbox: &BBox<T>,
    detections: &[Detection<T>],
    claimed: &[bool],
) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (j, det) in detections.iter().enumerate() {
        if claimed[j] {
            continue;
        }
        let score = iou(bbox, &det.bbox);
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((j, score)),
        }
    }
    best
}

/// One tracker step over a frame's detections. Returns the matched pairs;
/// tracks spawned from leftover detections are not part of the result.
pub fn passive_tracker_update<T: Scalar>(
    state: &mut TrackerState<T>,
    detections: &[Detection<T>],
    cfg: &TrackerConfig<T>,
    now: Timestamp,
) -> Vec<Match<T>> {
    let mut claimed = vec![false; detections.len()];
    let mut matches = Vec::new();
    let mut retained = Vec::with_capacity(state.tracks.len() + detections.len());

    for mut track in state.tracks.drain(..) {
        match best_unclaimed(&track.bbox, detections, &claimed) {
            Some((j, score)) if score > cfg.theta => {
                let det = &detections[j];
                track.bbox = det.bbox;
                track.lost_count = 0;
                track.last_matched = now;
                claimed[j] = true;
                matches.push(Match {
                    track_id: track.id,
                    detection: det.clone(),
                });
                retained.push(track);
            }
            _ => {
                track.lost_count += 1;
                if track.lost_count < cfg.l_max {
                    retained.push(track);
                }
            }
        }
    }

    for (det, _) in detections.iter().zip(&claimed).filter(|(_, c)| !**c) {
        retained.push(Track {
            id: state.next_id,
            bbox: det.bbox,
            label: det.label.clone(),
            lost_count: 0,
            first_seen: now,
            last_matched: now,
            last_reported: None,
        });
        state.next_id += 1;
    }

    state.tracks = retained;
    matches
}

/// Ids of tracks that have been continuously present for the dwell period
/// and are outside their cooldown. Returned tracks are marked reported.
pub fn evaluate_triggers<T: Scalar>(
    state: &mut TrackerState<T>,
    cfg: &TrackerConfig<T>,
    now: Timestamp,
) -> Vec<u64> {
    let mut fired = Vec::new();
    for track in state.tracks.iter_mut() {
        if track.lost_count != 0 || !cfg.target_labels.contains(&track.label) {
            continue;
        }
        if now.since(track.first_seen) < cfg.dwell {
            continue;
        }
        let cooled = match track.last_reported {
            None => true,
            Some(at) => now.since(at) >= cfg.cooldown,
        };
        if cooled {
            track.last_reported = Some(now);
            fired.push(track.id);
        }
    }
    fired
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64) -> Detection<f64> {
        Detection::new(BBox::new(x1, y1, x2, y2).unwrap(), "person", 0.9).unwrap()
    }

    fn cfg(theta: f64, l_max: u32) -> TrackerConfig<f64> {
        TrackerConfig {
            theta,
            l_max,
            ..TrackerConfig::default()
        }
    }

    const T0: Timestamp = Timestamp(1_000_000);

    #[test]
    fn empty_state_spawns_tracks_without_matches() {
        let mut s = TrackerState::new();
        let r = s.update(&[det(0., 0., 1., 1.), det(5., 5., 6., 6.)], &cfg(0.3, 10), T0);
        assert!(r.is_empty());
        assert_eq!(s.tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.next_id, 3);
    }

    #[test]
    fn identical_box_matches() {
        let mut s = TrackerState::new();
        s.update(&[det(0., 0., 2., 2.)], &cfg(0.3, 10), T0);
        s.tracks[0].lost_count = 4;
        let d = det(0., 0., 2., 2.);
        let r = s.update(std::slice::from_ref(&d), &cfg(0.3, 10), T0);
        assert_eq!(r, vec![Match { track_id: 1, detection: d }]);
        assert_eq!(s.tracks[0].lost_count, 0);
        assert_eq!(s.tracks.len(), 1);
    }

    #[test]
    fn track_at_last_chance_is_evicted() {
        let mut s = TrackerState::new();
        s.update(&[det(0., 0., 2., 2.)], &cfg(0.3, 3), T0);
        s.tracks[0].lost_count = 2;
        let r = s.update(&[], &cfg(0.3, 3), T0);
        assert!(r.is_empty());
        assert!(s.tracks.is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        // iou((0,0,2,2),(1,1,3,3)) = 1/7
        let mut s = TrackerState::new();
        s.update(&[det(0., 0., 2., 2.)], &cfg(0.3, 10), T0);
        let r = s.update(&[det(1., 1., 3., 3.)], &cfg(1.0 / 7.0, 10), T0);
        assert!(r.is_empty());
        assert_eq!(s.tracks.len(), 2);
        assert_eq!(s.tracks[0].lost_count, 1);
    }

    #[test]
    fn ties_take_lowest_detection_index() {
        let mut s = TrackerState::new();
        s.update(&[det(10., 10., 20., 20.)], &cfg(0.1, 10), T0);
        let left = det(5., 10., 15., 20.);
        let right = det(15., 10., 25., 20.);
        let r = s.update(&[left.clone(), right], &cfg(0.1, 10), T0);
        assert_eq!(r[0].detection, left);
        assert_eq!(s.tracks[1].id, 2);
    }

    #[test]
    fn earlier_track_claims_first() {
        let mut s = TrackerState::new();
        s.update(&[det(0., 0., 10., 10.), det(0., 0., 10., 10.)], &cfg(0.3, 10), T0);
        let r = s.update(&[det(0., 0., 10., 10.)], &cfg(0.3, 10), T0);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].track_id, 1);
        assert_eq!(s.get(2).unwrap().lost_count, 1);
    }

    #[test]
    fn triggers_respect_dwell_cooldown_and_presence() {
        let mut c = cfg(0.3, 10);
        c.dwell = Duration::from_secs(5);
        c.cooldown = Duration::from_secs(30);
        let mut s = TrackerState::new();
        s.update(&[det(0., 0., 2., 2.)], &c, T0);
        assert!(evaluate_triggers(&mut s, &c, T0).is_empty());

        let t5 = T0.plus(Duration::from_secs(5));
        s.update(&[det(0., 0., 2., 2.)], &c, t5);
        assert_eq!(evaluate_triggers(&mut s, &c, t5), vec![1]);
        assert!(evaluate_triggers(&mut s, &c, t5).is_empty());

        let t40 = T0.plus(Duration::from_secs(40));
        s.update(&[], &c, t40);
        assert!(evaluate_triggers(&mut s, &c, t40).is_empty());
    }

    #[test]
    fn triggers_ignore_untargeted_labels() {
        let c = cfg(0.3, 10);
        let mut s = TrackerState::new();
        let car = Detection::new(BBox::new(0., 0., 2., 2.).unwrap(), "car", 0.9).unwrap();
        s.update(&[car], &c, T0);
        assert!(evaluate_triggers(&mut s, &c, T0.plus(Duration::from_secs(60))).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.3, 10).validate().is_ok());
        assert_eq!(cfg(1.0, 10).validate(), Err(TrackerConfigError::Theta(1.0)));
        assert_eq!(cfg(0.0, 10).validate(), Err(TrackerConfigError::Theta(0.0)));
        assert_eq!(cfg(0.5, 0).validate(), Err(TrackerConfigError::LMax));
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection<f64>>> {
        prop::collection::vec(
            (0.0..90.0f64, 0.0..90.0f64, 1.0..30.0f64, 1.0..30.0f64),
            0..=6,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h)| det(x, y, (x + w).min(100.), (y + h).min(100.)))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn update_invariants(
            frames in prop::collection::vec(arb_dets(), 1..6),
            theta in prop::sample::select(vec![0.1, 0.3, 0.5]),
            l_max in prop::sample::select(vec![1u32, 3, 10]),
        ) {
            let c = cfg(theta, l_max);
            let mut s = TrackerState::new();
            let mut issued = Vec::new();
            for (k, dets) in frames.iter().enumerate() {
                let before: Vec<_> = s.tracks.clone();
                let r = s.update(dets, &c, T0.plus(Duration::from_millis(100 * k as u64)));
                prop_assert!(r.len() <= before.len().min(dets.len()));
                let mut used = vec![false; dets.len()];
                for m in &r {
                    let prev = before.iter().find(|t| t.id == m.track_id).unwrap();
                    prop_assert!(iou(&prev.bbox, &m.detection.bbox) > theta);
                    let free = dets
                        .iter()
                        .enumerate()
                        .position(|(j, d)| !used[j] && *d == m.detection);
                    prop_assert!(free.is_some(), "detection matched twice");
                    used[free.unwrap()] = true;
                    prop_assert_eq!(s.get(m.track_id).unwrap().lost_count, 0);
                }
                for t in &s.tracks {
                    prop_assert!(t.lost_count < l_max);
                    if !issued.contains(&t.id) {
                        prop_assert!(issued.last().is_none_or(|&l| t.id > l));
                        issued.push(t.id);
                    }
                }
                prop_assert!(s.next_id > issued.last().copied().unwrap_or(0));
            }
        }
    }
}
