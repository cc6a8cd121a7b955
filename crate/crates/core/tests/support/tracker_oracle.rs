//! Literal transcription of the passive tracker update over integer boxes.
//! Scores are exact fractions compared by cross-multiplication, so nothing
//! here shares code or rounding with the library.

use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl IBox {
    fn area(&self) -> i64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OTrack {
    pub b: IBox,
    pub l: u32,
}

/// `id_new` is the last id handed out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OState {
    pub tracks: BTreeMap<u64, OTrack>,
    pub id_new: u64,
}

/// (numerator, denominator), denominator > 0.
pub type Frac = (i64, i64);

fn inter(a: &IBox, b: &IBox) -> i64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0 || h <= 0 {
        0
    } else {
        w * h
    }
}

pub fn iou(a: &IBox, b: &IBox) -> Frac {
    let i = inter(a, b);
    (i, a.area() + b.area() - i)
}

pub fn gt(a: Frac, b: Frac) -> bool {
    a.0 * b.1 > b.0 * a.1
}

/// Returns R as (track id, detection index) pairs.
pub fn update(t: &mut OState, d: &[IBox], theta: Frac, l_max: u32) -> Vec<(u64, usize)> {
    let mut t_new = BTreeMap::new();
    let mut u = BTreeSet::new();
    let mut r = Vec::new();

    // #1 greedy matching
    for (&i, t_i) in &t.tracks {
        let mut j_star: Option<usize> = None;
        for j in 0..d.len() {
            if u.contains(&j) {
                continue;
            }
            match j_star {
                None => j_star = Some(j),
                Some(k) if gt(iou(&t_i.b, &d[j]), iou(&t_i.b, &d[k])) => j_star = Some(j),
                _ => {}
            }
        }
        match j_star {
            Some(j) if gt(iou(&t_i.b, &d[j]), theta) => {
                t_new.insert(i, OTrack { b: d[j], l: 0 });
                u.insert(j);
                r.push((i, j));
            }
            _ => {
                let l = t_i.l + 1;
                if l < l_max {
                    t_new.insert(i, OTrack { b: t_i.b, l });
                }
            }
        }
    }

    // #2 new tracks
    for (j, d_j) in d.iter().enumerate() {
        if !u.contains(&j) {
            t.id_new += 1;
            t_new.insert(t.id_new, OTrack { b: *d_j, l: 0 });
        }
    }

    t.tracks = t_new;
    r
}
