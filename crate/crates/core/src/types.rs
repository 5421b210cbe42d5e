//! Geometry primitives, the label taxonomy and the task schema shared by the
//! rest of the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total number of known and unknown classes used by the reference setup.
pub const DEFAULT_TOTAL_CLASSES: u32 = 80;

/// Axis-aligned box in center/size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

/// Corner view of a [`BBox`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let finite = cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { cx, cy, w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(c: Corners) -> Result<Self> {
        Self::new(
            (c.xmin + c.xmax) / 2.0,
            (c.ymin + c.ymax) / 2.0,
            c.xmax - c.xmin,
            c.ymax - c.ymin,
        )
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_corners(&self) -> Corners {
        Corners {
            xmin: self.cx - self.w / 2.0,
            ymin: self.cy - self.h / 2.0,
            xmax: self.cx + self.w / 2.0,
            ymax: self.cy + self.h / 2.0,
        }
    }

    /// Intersection over union; symmetric, 1 for identical boxes and 0 for
    /// disjoint ones.
    pub fn iou(&self, other: &BBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let a = self.to_corners();
        let b = other.to_corners();
        let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
        let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.cx, b.cy, b.w, b.h]
    }
}

/// Free function form of [`BBox::iou`].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Class of an object or prediction. Background is a separate variant so it
/// can never be confused with class id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Known(u32),
    Unknown(u32),
    Background,
}

impl ClassLabel {
    pub fn is_known(&self) -> bool {
        matches!(self, ClassLabel::Known(_))
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, ClassLabel::Unknown(_))
    }

    pub fn is_background(&self) -> bool {
        matches!(self, ClassLabel::Background)
    }

    /// Flat class id; `None` for background.
    pub fn id(&self) -> Option<u32> {
        match *self {
            ClassLabel::Known(id) | ClassLabel::Unknown(id) => Some(id),
            ClassLabel::Background => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::Known(id) => write!(f, "known-{id}"),
            ClassLabel::Unknown(id) => write!(f, "unknown-{id}"),
            ClassLabel::Background => f.write_str("background"),
        }
    }
}

/// `known` classes occupy ids `[0, known)`, unknown slots occupy
/// `[known, known + unknown)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub known: u32,
    pub unknown: u32,
}

impl LabelSpace {
    pub fn new(known: u32, unknown: u32) -> Self {
        Self { known, unknown }
    }

    pub fn total(&self) -> u32 {
        self.known + self.unknown
    }

    /// Width of a classifier output: every class plus one background slot.
    pub fn logit_width(&self) -> usize {
        (self.total() + 1) as usize
    }

    pub fn background_slot(&self) -> usize {
        self.total() as usize
    }

    pub fn first_unknown(&self) -> ClassLabel {
        ClassLabel::Unknown(self.known)
    }

    pub fn label(&self, id: u32) -> Result<ClassLabel> {
        if id < self.known {
            Ok(ClassLabel::Known(id))
        } else if id < self.total() {
            Ok(ClassLabel::Unknown(id))
        } else {
            Err(Error::ClassIdOutOfRange {
                id,
                known: self.known,
                unknown: self.unknown,
            })
        }
    }

    /// Classifier slot of a label.
    pub fn slot(&self, label: ClassLabel) -> Result<usize> {
        match label {
            ClassLabel::Background => Ok(self.background_slot()),
            ClassLabel::Known(id) | ClassLabel::Unknown(id) => {
                let checked = self.label(id)?;
                if checked != label {
                    return Err(Error::InvalidLabel(format!(
                        "{label} does not match the id range of its variant"
                    )));
                }
                Ok(id as usize)
            }
        }
    }

    /// Label of a classifier slot.
    pub fn label_of_slot(&self, slot: usize) -> Result<ClassLabel> {
        if slot == self.background_slot() {
            Ok(ClassLabel::Background)
        } else {
            self.label(slot as u32)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthObject {
    pub image_id: u64,
    pub label: ClassLabel,
    pub bbox: BBox,
    pub is_pseudo: bool,
}

impl GroundTruthObject {
    pub fn new(image_id: u64, label: ClassLabel, bbox: BBox) -> Result<Self> {
        if label.is_background() {
            return Err(Error::InvalidLabel(
                "ground-truth objects cannot be background".into(),
            ));
        }
        Ok(Self {
            image_id,
            label,
            bbox,
            is_pseudo: false,
        })
    }

    /// Pseudo ground truth is always marked unknown.
    pub fn pseudo(image_id: u64, label: ClassLabel, bbox: BBox) -> Result<Self> {
        if !label.is_unknown() {
            return Err(Error::InvalidLabel(format!(
                "pseudo-labels must be unknown, got {label}"
            )));
        }
        Ok(Self {
            image_id,
            label,
            bbox,
            is_pseudo: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub label: ClassLabel,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: u64, label: ClassLabel, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            image_id,
            label,
            bbox,
            score,
        })
    }
}

/// Class-agnostic region proposal with its objectness score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub image_id: u64,
    pub bbox: BBox,
    pub objectness: f64,
}

impl Proposal {
    pub fn new(image_id: u64, bbox: BBox, objectness: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&objectness) {
            return Err(Error::InvalidScore(objectness));
        }
        Ok(Self {
            image_id,
            bbox,
            objectness,
        })
    }
}

/// One step of the incremental task sequence. The known set only grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task_index: u32,
    pub known_count: u32,
    pub unknown_slots: u32,
}

impl TaskConfig {
    pub fn first(known_count: u32, unknown_slots: u32) -> Result<Self> {
        if known_count == 0 {
            return Err(Error::InvalidConfig("a task needs at least one known class".into()));
        }
        Ok(Self {
            task_index: 1,
            known_count,
            unknown_slots,
        })
    }

    /// Introduce `new_classes` more known classes, keeping `C + U` fixed.
    pub fn next(&self, new_classes: u32) -> Result<Self> {
        if new_classes == 0 {
            return Err(Error::InvalidConfig(
                "each new task must introduce at least one class".into(),
            ));
        }
        if new_classes > self.unknown_slots {
            return Err(Error::InvalidConfig(format!(
                "cannot introduce {new_classes} classes with only {} unknown slots left",
                self.unknown_slots
            )));
        }
        Ok(Self {
            task_index: self.task_index + 1,
            known_count: self.known_count + new_classes,
            unknown_slots: self.unknown_slots - new_classes,
        })
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::new(self.known_count, self.unknown_slots)
    }
}
