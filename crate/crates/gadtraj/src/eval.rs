//! Anomaly-detection metrics: thresholded confusion counts, rates, AUROC
//! (trapezoidal over the ROC sweep) and AUPRC as average precision.

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// Scores with binary ground truth, one entry per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Counts under the decision rule: predict abnormal iff score >= gamma.
pub fn confusion_at_threshold(s: &ScoredSet, gamma: f64) -> Confusion {
    let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        let predicted = score >= gamma;
        match (predicted, label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub precision: f64,
    pub recall: f64,
    /// Names of rates whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

/// TPR = TP/P, FPR = FP/N, FNR = 1 - TPR, precision = TP/(TP+FP),
/// recall = TPR. A 0/0 is reported as 0 and flagged.
pub fn classification_rates(c: &Confusion) -> Rates {
    let mut undefined = Vec::new();
    let mut ratio = |num: usize, den: usize, name: &str| -> f64 {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let p = c.tp + c.fn_;
    let n = c.fp + c.tn;
    let tpr = ratio(c.tp, p, "tpr");
    let fpr = ratio(c.fp, n, "fpr");
    let precision = ratio(c.tp, c.tp + c.fp, "precision");
    let fnr = if p == 0 {
        undefined.push("fnr".to_string());
        0.0
    } else {
        1.0 - tpr
    };
    Rates { tpr, fpr, fnr, precision, recall: tpr, undefined }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC sweep over all distinct score thresholds, descending. One point per
/// distinct score plus the (0,0) origin; ends at (1,1).
pub fn roc_curve(s: &ScoredSet) -> Result<Vec<RocPoint>, EvalError> {
    let p = s.positives();
    let n = s.negatives();
    if p == 0 || n == 0 {
        return Err(EvalError::Undefined {
            metric: "auroc",
            reason: format!("needs both classes, got {p} positives and {n} negatives"),
        });
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].partial_cmp(&s.scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_score = f64::INFINITY;
    for &i in &order {
        if s.scores[i] != prev_score {
            points.push(RocPoint { fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64 });
            prev_score = s.scores[i];
        }
        if s.labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    points.push(RocPoint { fpr: 1.0, tpr: 1.0 });
    // drop the duplicated origin the first threshold produced
    points.dedup_by(|a, b| a == b);
    Ok(points)
}

/// Trapezoidal area under the ROC curve. Equals the pairwise probability
/// P(score+ > score-) + 0.5 P(tie).
pub fn auroc(s: &ScoredSet) -> Result<f64, EvalError> {
    let curve = roc_curve(s)?;
    let mut area = 0.0;
    for w in curve.windows(2) {
        area += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall pairs at every distinct positive-introducing threshold.
pub fn pr_curve(s: &ScoredSet) -> Result<Vec<PrPoint>, EvalError> {
    let p = s.positives();
    if p == 0 {
        return Err(EvalError::Undefined { metric: "auprc", reason: "no positive labels".into() });
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].partial_cmp(&s.scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        // consume a tie group in one step
        let score = s.scores[order[i]];
        let mut j = i;
        while j < order.len() && s.scores[order[j]] == score {
            if s.labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
        i = j;
    }
    Ok(points)
}

/// Average precision: sum over recall increments of the precision at each
/// positive-introducing threshold (step-wise, not trapezoidal).
pub fn auprc(s: &ScoredSet) -> Result<f64, EvalError> {
    let curve = pr_curve(s)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for pt in curve {
        if pt.recall > prev_recall {
            ap += (pt.recall - prev_recall) * pt.precision;
            prev_recall = pt.recall;
        }
    }
    Ok(ap)
}

/// Everything the evaluate command reports for one scored split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub threshold: f64,
    pub confusion: Confusion,
    pub rates: Rates,
    pub auroc: f64,
    pub auprc: f64,
    pub roc_curve: Vec<RocPoint>,
    pub pr_curve: Vec<PrPoint>,
}

impl EvalReport {
    pub fn compute(s: &ScoredSet, threshold: f64) -> Result<Self, EvalError> {
        let confusion = confusion_at_threshold(s, threshold);
        Ok(EvalReport {
            scores: s.scores.clone(),
            labels: s.labels.clone(),
            threshold,
            rates: classification_rates(&confusion),
            confusion,
            auroc: auroc(s)?,
            auprc: auprc(s)?,
            roc_curve: roc_curve(s)?,
            pr_curve: pr_curve(s)?,
        })
    }
}
