//! Threshold detection statistics and rank-based AUROC.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SibaError};

/// Whether large or small scores indicate a poisoned sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagDirection {
    /// Flag when score >= threshold (e.g. Scale-Up consistency).
    HighIsPoisoned,
    /// Flag when score <= threshold (e.g. STRIP entropy).
    LowIsPoisoned,
}

#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub tpr: f64,
    pub fpr: f64,
    pub auroc: f64,
    pub threshold: f64,
    pub direction: FlagDirection,
    /// Filled in by the caller once the defense has been applied end to end.
    pub post_defense_asr: Option<f64>,
    pub scores_poisoned: Vec<f64>,
    pub scores_benign: Vec<f64>,
}

/// TPR/FPR at the given threshold plus AUROC over the pooled scores. AUROC
/// uses the rank-statistic (Mann-Whitney) estimator with average ranks for
/// ties, oriented so that 1.0 means the direction separates perfectly.
pub fn detection_report(
    scores_poisoned: &[f64],
    scores_benign: &[f64],
    threshold: f64,
    direction: FlagDirection,
) -> Result<DetectionReport> {
    if scores_poisoned.is_empty() || scores_benign.is_empty() {
        return Err(SibaError::invalid("detection_report requires non-empty score lists"));
    }
    if scores_poisoned.iter().chain(scores_benign).any(|s| !s.is_finite()) {
        return Err(SibaError::invalid("detection scores must be finite"));
    }
    let flagged = |s: f64| match direction {
        FlagDirection::HighIsPoisoned => s >= threshold,
        FlagDirection::LowIsPoisoned => s <= threshold,
    };
    let tpr = scores_poisoned.iter().filter(|&&s| flagged(s)).count() as f64
        / scores_poisoned.len() as f64;
    let fpr =
        scores_benign.iter().filter(|&&s| flagged(s)).count() as f64 / scores_benign.len() as f64;

    // orient so "higher = more poisoned", then rank the pooled scores
    let orient = |s: f64| match direction {
        FlagDirection::HighIsPoisoned => s,
        FlagDirection::LowIsPoisoned => -s,
    };
    let n_p = scores_poisoned.len();
    let n_b = scores_benign.len();
    let mut pooled: Vec<(f64, bool)> = scores_poisoned
        .iter()
        .map(|&s| (orient(s), true))
        .chain(scores_benign.iter().map(|&s| (orient(s), false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut rank_sum_poisoned = 0.0f64;
    let mut i = 0usize;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks are 1-based; tied entries share the average rank
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_poisoned += avg_rank;
            }
        }
        i = j;
    }
    let auroc =
        (rank_sum_poisoned - (n_p * (n_p + 1)) as f64 / 2.0) / (n_p as f64 * n_b as f64);

    Ok(DetectionReport {
        tpr,
        fpr,
        auroc,
        threshold,
        direction,
        post_defense_asr: None,
        scores_poisoned: scores_poisoned.to_vec(),
        scores_benign: scores_benign.to_vec(),
    })
}

pub fn write_detection_csv(path: &Path, report: &DetectionReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "metric,value")?;
    writeln!(out, "tpr,{:.6}", report.tpr)?;
    writeln!(out, "fpr,{:.6}", report.fpr)?;
    writeln!(out, "auroc,{:.6}", report.auroc)?;
    writeln!(out, "threshold,{:.6}", report.threshold)?;
    match report.post_defense_asr {
        Some(asr) => writeln!(out, "post_defense_asr,{asr:.6}")?,
        None => writeln!(out, "post_defense_asr,n/a")?,
    }
    writeln!(out, "sample,population,score")?;
    for (i, s) in report.scores_poisoned.iter().enumerate() {
        writeln!(out, "{i},poisoned,{s:.6}")?;
    }
    for (i, s) in report.scores_benign.iter().enumerate() {
        writeln!(out, "{i},benign,{s:.6}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) fn auroc_bruteforce(
    scores_poisoned: &[f64],
    scores_benign: &[f64],
    direction: FlagDirection,
) -> f64 {
    // probability-of-correct-ranking estimator by exhaustive pair counting
    let orient = |s: f64| match direction {
        FlagDirection::HighIsPoisoned => s,
        FlagDirection::LowIsPoisoned => -s,
    };
    let mut total = 0.0;
    for &p in scores_poisoned {
        for &b in scores_benign {
            let (p, b) = (orient(p), orient(b));
            if p > b {
                total += 1.0;
            } else if p == b {
                total += 0.5;
            }
        }
    }
    total / (scores_poisoned.len() * scores_benign.len()) as f64
}
