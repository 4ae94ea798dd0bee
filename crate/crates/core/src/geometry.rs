//! Boxes in normalized image coordinates, overlap measures and the
//! localization error taxonomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box with coordinates expressed as fractions of the image
/// width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Window {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let w = Window { x0, y0, x1, y1 };
        if w.is_valid() {
            Ok(w)
        } else {
            Err(Error::InvalidWindow { x0, y0, x1, y1 })
        }
    }

    /// Builds a window from a `[x0, y0, x1, y1]` array.
    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.y0)
            && in_unit(self.x1)
            && in_unit(self.y1)
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Window) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &Window) -> f64 {
        iou(self, other)
    }

    /// Non-strict containment: `other` lies inside `self`, touching allowed.
    pub fn contains(&self, other: &Window) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn respects_margin(&self, margin: f64) -> bool {
        self.x0 >= margin && self.y0 >= margin && self.x1 <= 1.0 - margin && self.y1 <= 1.0 - margin
    }

    pub fn flip_h(&self) -> Window {
        flip_h(self)
    }

    /// Converts a pixel box into normalized coordinates.
    pub fn from_pixels(b: [f64; 4], width: f64, height: f64) -> Result<Self> {
        Self::new(b[0] / width, b[1] / height, b[2] / width, b[3] / height)
    }
}

pub fn iou(a: &Window, b: &Window) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn check_margin(margin: f64) -> Result<()> {
    if (0.0..0.5).contains(&margin) {
        Ok(())
    } else {
        Err(Error::InvalidMargin(margin))
    }
}

/// Keeps the windows lying at least `margin` away from every image border.
pub fn margin_filter(windows: &[Window], margin: f64) -> Result<Vec<Window>> {
    check_margin(margin)?;
    Ok(windows.iter().copied().filter(|w| w.respects_margin(margin)).collect())
}

/// The whole image shrunk by `margin` on every side.
pub fn initial_window(margin: f64) -> Result<Window> {
    check_margin(margin)?;
    Ok(Window { x0: margin, y0: margin, x1: 1.0 - margin, y1: 1.0 - margin })
}

pub fn flip_h(w: &Window) -> Window {
    Window { x0: 1.0 - w.x1, y0: w.y0, x1: 1.0 - w.x0, y1: w.y1 }
}

/// Localization outcome of a hypothesis against a set of ground-truth boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorMode {
    CorrectLoc,
    HypInGt,
    GtInHyp,
    PartialOverlap,
    NoOverlap,
}

impl ErrorMode {
    pub const ALL: [ErrorMode; 5] = [
        ErrorMode::CorrectLoc,
        ErrorMode::HypInGt,
        ErrorMode::GtInHyp,
        ErrorMode::PartialOverlap,
        ErrorMode::NoOverlap,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorMode::CorrectLoc => "correct",
            ErrorMode::HypInGt => "hyp_in_gt",
            ErrorMode::GtInHyp => "gt_in_hyp",
            ErrorMode::PartialOverlap => "partial_overlap",
            ErrorMode::NoOverlap => "no_overlap",
        }
    }
}

pub const CORRECT_IOU: f64 = 0.5;

pub fn classify_error(hyp: &Window, gts: &[Window]) -> Result<ErrorMode> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth("hypothesis".into()));
    }
    let best = gts.iter().map(|g| iou(hyp, g)).fold(0.0, f64::max);
    let mode = if best >= CORRECT_IOU {
        ErrorMode::CorrectLoc
    } else if gts.iter().any(|g| g.contains(hyp)) {
        ErrorMode::HypInGt
    } else if gts.iter().any(|g| hyp.contains(g)) {
        ErrorMode::GtInHyp
    } else if best > 0.0 {
        ErrorMode::PartialOverlap
    } else {
        ErrorMode::NoOverlap
    };
    Ok(mode)
}

/// Largest IoU between `w` and any of `boxes`, 0 for an empty list.
pub fn max_iou(w: &Window, boxes: &[Window]) -> f64 {
    boxes.iter().map(|b| iou(w, b)).fold(0.0, f64::max)
}
