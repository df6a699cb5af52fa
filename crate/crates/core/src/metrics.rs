//! Threshold-free ranking metrics: average precision, AUROC, and their
//! per-dataset report.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Scores and binary labels (1 = positive) for one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub name: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(name: impl Into<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        check(&scores, &labels)?;
        Ok(Self {
            name: name.into(),
            scores,
            labels,
        })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives()
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("labels must be 0 or 1, got {y}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    Ok(())
}

fn count_positives(labels: &[u8]) -> usize {
    labels.iter().filter(|&&y| y == 1).count()
}

/// True when two entries share a score, in which case [`average_precision`]
/// depends on input order.
pub fn has_ties(scores: &[f64]) -> bool {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// Non-interpolated AP: `sum_k (R_k - R_{k-1}) P_k` over the ranking by
/// descending score. Equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let positives = count_positives(labels);
    if positives == 0 {
        return Err(Error::InvalidArgument("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Area under the ROC curve via the rank-sum statistic, with tied scores
/// sharing their average rank.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let pos = count_positives(labels);
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "AUROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += avg * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of per-dataset APs.
pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::Empty("mean AP over no datasets".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub ap: f64,
    pub auroc: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_COLUMNS: &str = "dataset\tap\tauroc\tn_pos\tn_neg";

impl EvalReport {
    pub fn from_sets(sets: &[ScoredSet]) -> Result<Self> {
        let rows = sets
            .iter()
            .map(|s| {
                Ok(EvalRow {
                    name: s.name.clone(),
                    ap: average_precision(&s.scores, &s.labels)?,
                    auroc: auroc(&s.scores, &s.labels)?,
                    positives: s.positives(),
                    negatives: s.negatives(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn mean_ap(&self) -> Result<f64> {
        mean_ap(&self.rows.iter().map(|r| r.ap).collect::<Vec<_>>())
    }

    pub fn mean_auroc(&self) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::Empty("mean AUROC over no datasets".into()));
        }
        Ok(self.rows.iter().map(|r| r.auroc).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn row(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Tab-separated table: optional `#` header line, the column names, one
    /// row per dataset and a final `mean` row holding mAP and mean AUROC.
    pub fn to_tsv(&self, header: Option<&str>) -> Result<String> {
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(h);
            out.push('\n');
        }
        out.push_str(REPORT_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}\t{}",
                r.name, r.ap, r.auroc, r.positives, r.negatives
            );
        }
        let pos: usize = self.rows.iter().map(|r| r.positives).sum();
        let neg: usize = self.rows.iter().map(|r| r.negatives).sum();
        let _ = writeln!(
            out,
            "mean\t{:.6}\t{:.6}\t{pos}\t{neg}",
            self.mean_ap()?,
            self.mean_auroc()?
        );
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.6, 0.4, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!((average_precision(&[0.9, 0.5, 0.1], &[1, 0, 1]).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert!((average_precision(&[5.0, 4.0, 3.0, 2.0], &[0, 0, 0, 1]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_fail() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(average_precision(&[0.1], &[0]).is_err());
        assert!(auroc(&[0.1, f64::NAN], &[1, 0]).is_err());
        assert!(auroc(&[0.1], &[1, 0]).is_err());
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn ties_change_ap_with_order() {
        assert!(has_ties(&[0.5, 0.1, 0.5]));
        assert!(!has_ties(&[0.5, 0.1]));
        let a = average_precision(&[0.5, 0.5], &[1, 0]).unwrap();
        let b = average_precision(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!((a, b), (1.0, 0.5));
    }

    #[test]
    fn report_layout() {
        let sets = vec![
            ScoredSet::new("a", vec![0.9, 0.1], vec![1, 0]).unwrap(),
            ScoredSet::new("b", vec![0.1, 0.9], vec![1, 0]).unwrap(),
        ];
        let report = EvalReport::from_sets(&sets).unwrap();
        let text = report.to_tsv(Some("# test")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# test");
        assert_eq!(lines[1], REPORT_COLUMNS);
        assert_eq!(lines[2], "a\t1.000000\t1.000000\t1\t1");
        assert_eq!(lines[3], "b\t0.500000\t0.000000\t1\t1");
        assert_eq!(lines[4], "mean\t0.750000\t0.500000\t2\t2");
    }
}
