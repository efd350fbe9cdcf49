//! Pixel-level confusion counts with the fish class as positive.

use std::fmt;
use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::sonar::{FanGeometry, MaskImage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    /// Count over pixels where `region` is true (all pixels when `None`).
    pub fn from_masks(pred: &MaskImage, truth: &MaskImage, region: Option<&[bool]>) -> Result<Self> {
        if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
            return Err(Error::dim(format!(
                "prediction {}×{} vs truth {}×{}",
                pred.width(),
                pred.height(),
                truth.width(),
                truth.height()
            )));
        }
        if region.is_some_and(|r| r.len() != pred.pixels().len()) {
            return Err(Error::dim("region mask size differs"));
        }
        let mut c = Self::default();
        for (i, (&p, &t)) in pred.pixels().iter().zip(truth.pixels()).enumerate() {
            if region.is_some_and(|r| !r[i]) {
                continue;
            }
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`: the harmonic mean of precision and recall
    /// where both exist, undefined only with no positives anywhere.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    /// Share of truly negative pixels predicted as fish.
    pub fn false_positive_rate(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn swapped(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = Self::default();
        for c in iter {
            acc += c;
        }
        acc
    }
}

/// `nan` for undefined metrics.
pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl fmt::Display for ConfusionCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tp = {}", self.tp)?;
        writeln!(f, "fp = {}", self.fp)?;
        writeln!(f, "tn = {}", self.tn)?;
        writeln!(f, "fn = {}", self.fn_)?;
        writeln!(f, "accuracy = {}", fmt_metric(self.accuracy()))?;
        writeln!(f, "precision = {}", fmt_metric(self.precision()))?;
        writeln!(f, "recall = {}", fmt_metric(self.recall()))?;
        writeln!(f, "f1 = {}", fmt_metric(self.f1()))?;
        write!(f, "iou = {}", fmt_metric(self.iou()))
    }
}

/// Confusion counts for one mask pair; `restrict_to_fan` limits counting to
/// the default sonar fan of the mask's raster.
pub fn evaluate(pred: &MaskImage, truth: &MaskImage, restrict_to_fan: bool) -> Result<ConfusionCounts> {
    if restrict_to_fan {
        let fan = FanGeometry::new(truth.width(), truth.height(), crate::sonar::geometry::DEFAULT_APERTURE_DEG)?.fan_mask();
        ConfusionCounts::from_masks(pred, truth, Some(&fan))
    } else {
        ConfusionCounts::from_masks(pred, truth, None)
    }
}
