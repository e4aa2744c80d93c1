//! Depth and segmentation metrics, pooled over every valid pixel of a set.
//!
//! Conventions: pixels are pooled globally (not averaged per image), the
//! δ test is strict (`max(y/y*, y*/y) < t`), and classes absent from the
//! ground truth are left out of the mean IoU and mean accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricOptions {
    pub thresholds: [f64; 3],
    /// Disparity of a pixel at depth `d` is `disparity_factor / d`
    /// (focal length in pixels times stereo baseline in meters).
    pub disparity_factor: f64,
}

impl DepthMetricOptions {
    pub fn new(disparity_factor: f64) -> Self {
        Self { thresholds: DEFAULT_THRESHOLDS, disparity_factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricReport {
    pub rel: f64,
    pub rms: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub disparity_mae: f64,
    pub valid_n: u64,
}

/// Running sums behind a [`DepthMetricReport`]; merge across images in a
/// fixed order for reproducible results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DepthAccumulator {
    abs_rel: f64,
    sq: f64,
    log10: f64,
    disparity: f64,
    hits: [u64; 3],
    n: u64,
    options: Option<DepthMetricOptions>,
}

impl DepthAccumulator {
    pub fn new(options: DepthMetricOptions) -> Self {
        Self { options: Some(options), ..Self::default() }
    }

    /// Adds one image's pixels. Fails on a non-positive or non-finite
    /// depth at a valid pixel, naming its index within this call.
    pub fn add(&mut self, pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<()> {
        check_lengths("depth_metrics", pred.len(), gt.len(), valid.len())?;
        let o = self.options.expect("constructed with options");
        for i in 0..pred.len() {
            if !valid[i] {
                continue;
            }
            let (y, t) = (pred[i], gt[i]);
            if !(y > 0.0 && y.is_finite() && t > 0.0 && t.is_finite()) {
                return Err(Error::Domain(format!(
                    "pixel {i}: prediction {y}, ground truth {t}; both must be positive"
                )));
            }
            self.abs_rel += (y - t).abs() / t;
            self.sq += (y - t) * (y - t);
            self.log10 += (y.log10() - t.log10()).abs();
            self.disparity += (o.disparity_factor / y - o.disparity_factor / t).abs();
            let ratio = (y / t).max(t / y);
            for (k, th) in o.thresholds.iter().enumerate() {
                if ratio < *th {
                    self.hits[k] += 1;
                }
            }
            self.n += 1;
        }
        Ok(())
    }

    /// All zeros when no pixel was valid; check `valid_n`.
    pub fn report(&self) -> DepthMetricReport {
        if self.n == 0 {
            return DepthMetricReport {
                rel: 0.0,
                rms: 0.0,
                log10: 0.0,
                delta1: 0.0,
                delta2: 0.0,
                delta3: 0.0,
                disparity_mae: 0.0,
                valid_n: 0,
            };
        }
        let n = self.n as f64;
        DepthMetricReport {
            rel: self.abs_rel / n,
            rms: (self.sq / n).sqrt(),
            log10: self.log10 / n,
            delta1: self.hits[0] as f64 / n,
            delta2: self.hits[1] as f64 / n,
            delta3: self.hits[2] as f64 / n,
            disparity_mae: self.disparity / n,
            valid_n: self.n,
        }
    }
}

fn check_lengths(op: &'static str, a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::shape(op, &[a, b], &[c]));
    }
    Ok(())
}

/// Depth metrics over the valid pixels of one pooled set.
pub fn depth_metrics(
    pred: &[f64],
    gt: &[f64],
    valid: &[bool],
    options: DepthMetricOptions,
) -> Result<DepthMetricReport> {
    let mut acc = DepthAccumulator::new(options);
    acc.add(pred, gt, valid)?;
    Ok(acc.report())
}

/// Mean absolute disparity error over valid pixels, with the number of
/// pixels it averages; `(0, 0)` when none is valid.
pub fn disparity_mae(pred: &[f64], gt: &[f64], valid: &[bool]) -> Result<(f64, u64)> {
    check_lengths("disparity_mae", pred.len(), gt.len(), valid.len())?;
    let mut sum = 0.0;
    let mut n = 0u64;
    for i in 0..pred.len() {
        if valid[i] {
            sum += (pred[i] - gt[i]).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { (0.0, 0) } else { (sum / n as f64, n) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetricReport {
    /// Rows are ground truth, columns prediction.
    pub confusion: Vec<Vec<u64>>,
    pub miou: f64,
    pub mean_accuracy: f64,
    pub pixel_accuracy: f64,
    /// `None` for classes absent from the ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub absent_classes: Vec<usize>,
    pub counted_n: u64,
}

/// Confusion matrix accumulated over images.
#[derive(Debug, Clone, PartialEq)]
pub struct SegAccumulator {
    classes: usize,
    ignore: Option<usize>,
    confusion: Vec<u64>,
}

impl SegAccumulator {
    pub fn new(classes: usize, ignore: Option<usize>) -> Self {
        Self { classes, ignore, confusion: vec![0; classes * classes] }
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("seg_metrics", &[pred.len()], &[gt.len()]));
        }
        let c = self.classes;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if Some(g) == self.ignore {
                continue;
            }
            if g >= c || p >= c {
                return Err(Error::Validation(format!("pixel {i}: labels ({g}, {p}) outside {c} classes")));
            }
            self.confusion[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SegAccumulator) {
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
    }

    pub fn report(&self) -> SegMetricReport {
        let c = self.classes;
        let at = |g: usize, p: usize| self.confusion[g * c + p];
        let total: u64 = self.confusion.iter().sum();
        let trace: u64 = (0..c).map(|k| at(k, k)).sum();
        let mut per_class_iou = Vec::with_capacity(c);
        let mut absent = Vec::new();
        let (mut iou_sum, mut acc_sum, mut present) = (0.0, 0.0, 0usize);
        for k in 0..c {
            let gt_k: u64 = (0..c).map(|p| at(k, p)).sum();
            if gt_k == 0 {
                per_class_iou.push(None);
                absent.push(k);
                continue;
            }
            let pred_k: u64 = (0..c).map(|g| at(g, k)).sum();
            let tp = at(k, k);
            let iou = tp as f64 / (gt_k + pred_k - tp) as f64;
            per_class_iou.push(Some(iou));
            iou_sum += iou;
            acc_sum += tp as f64 / gt_k as f64;
            present += 1;
        }
        let mean = |s: f64| if present == 0 { 0.0 } else { s / present as f64 };
        SegMetricReport {
            confusion: (0..c).map(|g| self.confusion[g * c..(g + 1) * c].to_vec()).collect(),
            miou: mean(iou_sum),
            mean_accuracy: mean(acc_sum),
            pixel_accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            per_class_iou,
            absent_classes: absent,
            counted_n: total,
        }
    }
}

pub fn seg_metrics(pred: &[usize], gt: &[usize], classes: usize, ignore: Option<usize>) -> Result<SegMetricReport> {
    let mut acc = SegAccumulator::new(classes, ignore);
    acc.add(pred, gt)?;
    Ok(acc.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> DepthMetricOptions {
        DepthMetricOptions::new(100.0 * 0.22)
    }

    #[test]
    fn perfect_depth() {
        let gt = [1.0, 2.0, 5.0, 9.0];
        let r = depth_metrics(&gt, &gt, &[true; 4], opts()).unwrap();
        assert_eq!((r.rel, r.rms, r.log10, r.disparity_mae), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!(r.valid_n, 4);
    }

    #[test]
    fn doubled_depth_fails_every_threshold() {
        let gt = [1.0, 2.0, 5.0];
        let pred: Vec<f64> = gt.iter().map(|v| v * 2.0).collect();
        let r = depth_metrics(&pred, &gt, &[true; 3], opts()).unwrap();
        assert!((r.rel - 1.0).abs() < 1e-15);
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 0.0, 0.0));
        assert!((r.log10 - 2f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn delta_is_strict() {
        let r = depth_metrics(&[1.25], &[1.0], &[true], opts()).unwrap();
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.delta2, 1.0);
    }

    #[test]
    fn non_positive_depth_names_the_pixel() {
        let err = depth_metrics(&[1.0, -1.0], &[1.0, 1.0], &[true, true], opts()).unwrap_err();
        assert!(matches!(&err, Error::Domain(m) if m.contains("pixel 1")), "{err}");
        // Holes may hold anything.
        assert!(depth_metrics(&[1.0, -1.0], &[1.0, 0.0], &[true, false], opts()).is_ok());
    }

    #[test]
    fn disparity_constant_offset() {
        let gt = [10.0, 20.0, 30.0];
        let pred: Vec<f64> = gt.iter().map(|v| v + 2.41).collect();
        let (mae, n) = disparity_mae(&pred, &gt, &[true; 3]).unwrap();
        assert!((mae - 2.41).abs() < 1e-12);
        assert_eq!(n, 3);
        assert_eq!(disparity_mae(&gt, &gt, &[true; 3]).unwrap().0, 0.0);
        assert_eq!(disparity_mae(&pred, &gt, &[false; 3]).unwrap(), (0.0, 0));
    }

    #[test]
    fn hand_computed_segmentation_case() {
        let r = seg_metrics(&[0, 1, 1, 1], &[0, 1, 0, 1], 2, None).unwrap();
        let iou: Vec<f64> = r.per_class_iou.iter().map(|v| v.unwrap()).collect();
        assert!((iou[0] - 0.5).abs() < 1e-15 && (iou[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert!((r.mean_accuracy - 0.75).abs() < 1e-15);
        assert!((r.pixel_accuracy - 0.75).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn perfect_segmentation_and_absent_classes() {
        let labels = [0, 2, 2, 0];
        let r = seg_metrics(&labels, &labels, 4, None).unwrap();
        assert_eq!((r.miou, r.mean_accuracy, r.pixel_accuracy), (1.0, 1.0, 1.0));
        assert_eq!(r.absent_classes, vec![1, 3]);
        assert_eq!(r.per_class_iou[1], None);
    }

    #[test]
    fn ignored_pixels_are_skipped_and_bad_labels_rejected() {
        let r = seg_metrics(&[0, 1, 0], &[0, 255, 1], 2, Some(255)).unwrap();
        assert_eq!(r.counted_n, 2);
        assert!(seg_metrics(&[0, 3], &[0, 1], 2, None).is_err());
    }

    #[test]
    fn accumulators_merge_additively() {
        let mut a = SegAccumulator::new(3, None);
        a.add(&[0, 1, 2], &[0, 2, 2]).unwrap();
        let mut b = SegAccumulator::new(3, None);
        b.add(&[1, 1], &[1, 0]).unwrap();
        let mut whole = SegAccumulator::new(3, None);
        whole.add(&[0, 1, 2, 1, 1], &[0, 2, 2, 1, 0]).unwrap();
        a.merge(&b);
        assert_eq!(a, whole);
    }
}
