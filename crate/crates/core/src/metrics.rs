//! Confusion matrix, per-class precision/recall/F1 and one-vs-rest ROC.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{arg_err, Result};
use crate::nn::NUM_CLASSES;
use crate::tensor::{Scalar, Tensor};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(predicted: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return arg_err(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        ));
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return arg_err(format!("label pair ({t}, {p}) outside 0..{NUM_CLASSES}"));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced precision or recall to 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return arg_err("cannot report on an empty confusion matrix");
    }
    let classes: Vec<ClassMetrics> = (0..NUM_CLASSES)
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, dp) = ratio(tp, cm.col_sum(c));
            let (recall, dr) = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
                degenerate: dp || dr,
            }
        })
        .collect();
    let n = NUM_CLASSES as f64;
    let macro_avg = Averages {
        precision: classes.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: classes.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: classes.iter().map(|m| m.f1).sum::<f64>() / n,
    };
    let wsum = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let weighted_avg = Averages {
        precision: wsum(|m| m.precision),
        recall: wsum(|m| m.recall),
        f1: wsum(|m| m.f1),
    };
    Ok(ClassificationReport {
        classes,
        macro_avg,
        weighted_avg,
        accuracy: cm.trace() as f64 / total as f64,
        total,
    })
}

impl ClassificationReport {
    /// Fixed-width table, values rounded to 4 decimals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<6} {:<6} {:>9} {:>9} {:>9} {:>8}",
            "class", "code", "precision", "recall", "f1-score", "support"
        )
        .unwrap();
        for (i, m) in self.classes.iter().enumerate() {
            let code = ClassLabel::from_index(i).map_or("?", |c| c.code());
            let flag = if m.degenerate { " *" } else { "" };
            writeln!(
                s,
                "{i:<6} {code:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}{flag}",
                m.precision, m.recall, m.f1, m.support
            )
            .unwrap();
        }
        writeln!(s).unwrap();
        for (name, a) in [
            ("macro avg", &self.macro_avg),
            ("weighted avg", &self.weighted_avg),
        ] {
            writeln!(
                s,
                "{name:<13} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                a.precision, a.recall, a.f1, self.total
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<13} {:>29.4} {:>8}",
            "accuracy", self.accuracy, self.total
        )
        .unwrap();
        if self.classes.iter().any(|m| m.degenerate) {
            writeln!(s, "* zero denominator, metric reported as 0").unwrap();
        }
        s
    }

    /// `key=value` lines with full precision and stable field names.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        writeln!(s, "accuracy={}", self.accuracy).unwrap();
        writeln!(s, "total={}", self.total).unwrap();
        for (i, m) in self.classes.iter().enumerate() {
            let code = ClassLabel::from_index(i).map_or("?", |c| c.code());
            writeln!(s, "class.{i}.code={code}").unwrap();
            writeln!(s, "class.{i}.precision={}", m.precision).unwrap();
            writeln!(s, "class.{i}.recall={}", m.recall).unwrap();
            writeln!(s, "class.{i}.f1={}", m.f1).unwrap();
            writeln!(s, "class.{i}.support={}", m.support).unwrap();
            writeln!(s, "class.{i}.degenerate={}", m.degenerate).unwrap();
        }
        for (name, a) in [("macro", &self.macro_avg), ("weighted", &self.weighted_avg)] {
            writeln!(s, "{name}.precision={}", a.precision).unwrap();
            writeln!(s, "{name}.recall={}", a.recall).unwrap();
            writeln!(s, "{name}.f1={}", a.f1).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Binary ROC by threshold sweep over distinct scores. `None` when the
/// truth has no positives or no negatives.
pub fn roc_binary(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), positive.len());
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: thr,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = trapezoid(points.iter().map(|p| (p.fpr, p.tpr)));
    Some(RocCurve { points, auc })
}

fn trapezoid(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut area = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (x, y) in points {
        if let Some((px, py)) = prev {
            area += (x - px) * (y + py) / 2.0;
        }
        prev = Some((x, y));
    }
    area
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSet {
    /// One-vs-rest curve per class; absent when that class is all-or-nothing in the truth.
    pub per_class: Vec<Option<RocCurve>>,
    /// Mean of the per-class TPRs interpolated on the union of their FPRs.
    pub macro_avg: Option<RocCurve>,
}

pub fn roc_ovr<T: Scalar>(probs: &Tensor<T>, truth: &[usize]) -> Result<RocSet> {
    if probs.rank() != 2 || probs.shape()[0] != truth.len() || probs.shape()[1] != NUM_CLASSES {
        return arg_err(format!(
            "roc needs (N, {NUM_CLASSES}) scores for N labels, got {:?}",
            probs.shape()
        ));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= NUM_CLASSES) {
        return arg_err(format!("label {bad} out of range"));
    }
    let per_class: Vec<Option<RocCurve>> = (0..NUM_CLASSES)
        .map(|c| {
            let scores: Vec<f64> = probs
                .data()
                .chunks(NUM_CLASSES)
                .map(|r| r[c].to_f64())
                .collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            roc_binary(&scores, &positive)
        })
        .collect();
    Ok(RocSet {
        macro_avg: macro_curve(&per_class),
        per_class,
    })
}

/// TPR at `fpr` on a step-free piecewise-linear curve, taking the highest
/// TPR where the curve is vertical.
fn interp(points: &[RocPoint], fpr: f64) -> f64 {
    let mut best: f64 = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if fpr >= a.fpr && fpr <= b.fpr {
            let t = if b.fpr > a.fpr {
                a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
            } else {
                b.tpr
            };
            best = best.max(t);
        }
    }
    best
}

fn macro_curve(per_class: &[Option<RocCurve>]) -> Option<RocCurve> {
    let curves: Vec<&RocCurve> = per_class.iter().flatten().collect();
    if curves.is_empty() {
        return None;
    }
    let mut grid: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.fpr))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut points: Vec<RocPoint> = grid
        .iter()
        .map(|&f| RocPoint {
            threshold: f64::NAN,
            fpr: f,
            tpr: curves.iter().map(|c| interp(&c.points, f)).sum::<f64>() / curves.len() as f64,
        })
        .collect();
    if grid[0] == 0.0 {
        points.insert(
            0,
            RocPoint {
                threshold: f64::NAN,
                fpr: 0.0,
                tpr: 0.0,
            },
        );
    }
    let auc = trapezoid(points.iter().map(|p| (p.fpr, p.tpr)));
    Some(RocCurve { points, auc })
}

impl RocSet {
    /// `class,threshold,fpr,tpr` rows (class `macro` for the average curve)
    /// followed by one `# auc` line per curve.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,threshold,fpr,tpr\n");
        let named = self
            .per_class
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    ClassLabel::from_index(i)
                        .map_or("?", |l| l.code())
                        .to_string(),
                    c.as_ref(),
                )
            })
            .chain(std::iter::once((
                "macro".to_string(),
                self.macro_avg.as_ref(),
            )));
        let mut summary = String::new();
        for (name, curve) in named {
            match curve {
                Some(c) => {
                    for p in &c.points {
                        writeln!(s, "{name},{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
                    }
                    write!(summary, " {name}={:.6}", c.auc).unwrap();
                }
                None => write!(summary, " {name}=absent").unwrap(),
            }
        }
        writeln!(s, "# auc{summary}").unwrap();
        s
    }
}
