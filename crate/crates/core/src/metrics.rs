//! Confusion matrices, per-class IoU and mIoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, IGNORE_LABEL};

/// `C x C` pixel counts, rows indexed by ground truth and columns by
/// prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            ignored: 0,
        }
    }

    /// Builds a matrix from explicit row-major counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::shape(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts,
            ignored: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies `counts[gt][pred]` for every pixel whose ground truth is not
    /// the ignore label.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        gt.check_classes(self.num_classes)?;
        let c = self.num_classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE_LABEL {
                self.ignored += 1;
                continue;
            }
            if p as usize >= c {
                return Err(Error::Bounds(format!("predicted class {p} outside [0, {c})")));
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("cannot merge matrices of different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    /// `TP / (TP + FP + FN)` for class `c`, or `None` if the class appears in
    /// neither ground truth nor prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let n = self.num_classes;
        let tp = self.get(c, c);
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
        let fp: u64 = (0..n).filter(|&t| t != c).map(|t| self.get(t, c)).sum();
        let union = tp + fp + fn_;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain_id: String,
    /// `null` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Mean IoU over the classes with non-empty union.
pub fn miou(cm: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    if cm.total() == 0 {
        return Err(Error::contract("mIoU of an empty confusion matrix"));
    }
    let per_class: Vec<Option<f64>> = (0..cm.num_classes).map(|c| cm.iou(c)).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((per_class, mean))
}

pub fn report(domain_id: &str, cm: &ConfusionMatrix) -> Result<EvalReport> {
    let (per_class_iou, miou) = miou(cm)?;
    Ok(EvalReport {
        domain_id: domain_id.to_string(),
        per_class_iou,
        miou,
    })
}

/// Unweighted mean of per-domain mIoU.
pub fn average_over_targets(reports: &[EvalReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::contract("no reports to average"));
    }
    Ok(reports.iter().map(|r| r.miou).sum::<f64>() / reports.len() as f64)
}

/// Per-target reports plus their average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reports: Vec<EvalReport>,
    pub avg_miou: f64,
}

impl EvalSummary {
    pub fn new(reports: Vec<EvalReport>) -> Result<Self> {
        let avg_miou = average_over_targets(&reports)?;
        Ok(EvalSummary { reports, avg_miou })
    }

    pub fn miou_of(&self, domain_id: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.domain_id == domain_id).map(|r| r.miou)
    }

    /// One row per domain: `target,<class IoUs>,mIoU,Avg.`
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("target");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",mIoU,Avg.\n");
        for r in &self.reports {
            out.push_str(&r.domain_id);
            for v in &r.per_class_iou {
                match v {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push(','),
                }
            }
            out.push_str(&format!(",{:.6},{:.6}\n", r.miou, self.avg_miou));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal_with_unit_miou() {
        let gt = lm(2, 3, &[0, 1, 2, 2, 1, 0]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&gt, &gt).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p), if t == p { 2 } else { 0 });
            }
        }
        assert_eq!(miou(&cm).unwrap().1, 1.0);
    }

    #[test]
    fn all_ignored_gives_empty_matrix() {
        let gt = LabelMap::filled(3, 4, IGNORE_LABEL);
        let pred = LabelMap::filled(3, 4, 1);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(cm.ignored(), 12);
        assert!(matches!(miou(&cm), Err(Error::Contract(_))));
    }

    #[test]
    fn two_class_hand_tally() {
        let gt = lm(2, 2, &[0, 0, 1, 1]);
        let pred = lm(2, 2, &[0, 1, 1, 1]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.counts(), &[1, 1, 0, 2]);
        let (per, m) = miou(&cm).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gt = lm(1, 4, &[0, 0, 1, 1]);
        let pred = lm(1, 4, &[1, 1, 0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(miou(&cm).unwrap().1, 0.0);
    }

    #[test]
    fn single_class_formula() {
        // class 0: TP=3, FN=2, FP=1
        let cm = ConfusionMatrix::from_counts(2, vec![3, 2, 1, 0]).unwrap();
        assert_eq!(cm.iou(0), Some(0.5));
    }

    #[test]
    fn absent_classes_are_excluded() {
        let gt = lm(1, 3, &[0, 0, 2]);
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&gt, &gt).unwrap();
        let (per, m) = miou(&cm).unwrap();
        assert_eq!(per, vec![Some(1.0), None, Some(1.0), None]);
        assert_eq!(m, 1.0);
    }

    #[test]
    fn out_of_range_classes_error() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&lm(1, 1, &[2]), &lm(1, 1, &[0])).is_err());
        assert!(cm.accumulate(&lm(1, 1, &[0]), &lm(1, 1, &[5])).is_err());
        assert!(cm.accumulate(&lm(1, 2, &[0, 0]), &lm(1, 1, &[0])).is_err());
    }

    #[test]
    fn average_examples() {
        let r = |m| EvalReport {
            domain_id: "d".into(),
            per_class_iou: vec![],
            miou: m,
        };
        assert_eq!(average_over_targets(&[r(0.4)]).unwrap(), 0.4);
        assert!((average_over_targets(&[r(75.8), r(71.2)]).unwrap() - 73.5).abs() < 1e-12);
        assert!(average_over_targets(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 2, 1, 0]).unwrap();
        let summary = EvalSummary::new(vec![report("a", &cm).unwrap(), report("b", &cm).unwrap()]).unwrap();
        let csv = summary.to_csv(&["x".into(), "y".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "target,x,y,mIoU,Avg.");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,0.500000,0.000000,"));
    }
}
