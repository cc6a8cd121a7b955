//! Axis-aligned boxes, detections and intersection-over-union.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("inverted box: ({x1:?},{y1:?})-({x2:?},{y2:?})")]
    Inverted { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("confidence {0} outside [0,1]")]
    Confidence(f64),
    #[error("empty detection label")]
    EmptyLabel,
}

/// Pixel-space box with `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self, GeometryError> {
        if x1 > x2 || y1 > y2 || [x1, y1, x2, y2].iter().any(|v| v.is_nan_value()) {
            return Err(GeometryError::Inverted {
                x1: x1.to_f64_lossy(),
                y1: y1.to_f64_lossy(),
                x2: x2.to_f64_lossy(),
                y2: y2.to_f64_lossy(),
            });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() == T::zero()
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox<T>) -> T {
        let ix1 = T::max_of(self.x1, other.x1);
        let iy1 = T::max_of(self.y1, other.y1);
        let ix2 = T::min_of(self.x2, other.x2);
        let iy2 = T::min_of(self.y2, other.y2);
        if ix2 <= ix1 || iy2 <= iy1 {
            return T::zero();
        }
        (ix2 - ix1) * (iy2 - iy1)
    }

    /// Clamp to `[0, width] x [0, height]`. Boxes entirely outside collapse
    /// onto the border with zero area.
    pub fn clip(&self, width: T, height: T) -> BBox<T> {
        let cx = |v: T| T::min_of(T::max_of(v, T::zero()), width);
        let cy = |v: T| T::min_of(T::max_of(v, T::zero()), height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn translate(&self, dx: T, dy: T) -> BBox<T> {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn to_f64(&self) -> BBox<f64> {
        BBox {
            x1: self.x1.to_f64_lossy(),
            y1: self.y1.to_f64_lossy(),
            x2: self.x2.to_f64_lossy(),
            y2: self.y2.to_f64_lossy(),
        }
    }
}

impl<T: Scalar> fmt::Display for BBox<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.to_f64();
        write!(f, "({},{},{},{})", b.x1, b.y1, b.x2, b.y2)
    }
}

/// Intersection area over union area, in `[0, 1]`.
///
/// Two degenerate boxes have zero union; the score is defined as 0 then.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    inter / union
}

/// One detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub label: String,
    pub confidence: T,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BBox<T>, label: impl Into<String>, confidence: T) -> Result<Self, GeometryError> {
        let label = label.into();
        if label.is_empty() {
            return Err(GeometryError::EmptyLabel);
        }
        if confidence < T::zero() || confidence > T::one() || confidence.is_nan_value() {
            return Err(GeometryError::Confidence(confidence.to_f64_lossy()));
        }
        Ok(Detection {
            bbox,
            label,
            confidence,
        })
    }
}
