//! Majority-vote verification of suspect models and the evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::MetaClassifier;
use crate::nn::Model;
use crate::spectrum::{generate_spectra, SpectrumOptions};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stolen,
    Benign,
}

/// Outcome of verifying one suspect. Field names are part of the JSON report format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suspect_id: String,
    /// Number of fingerprints that entered the vote.
    pub n: usize,
    /// Fingerprints scoring at or below the threshold.
    pub votes: usize,
    pub fraction: f64,
    pub verdict: Verdict,
    pub threshold: f64,
    pub scores: Vec<f64>,
}

/// Stolen iff strictly more than half of the votes are at or below `threshold`.
pub fn majority_verdict(votes: usize, n: usize) -> Verdict {
    if 2 * votes > n {
        Verdict::Stolen
    } else {
        Verdict::Benign
    }
}

impl VerificationReport {
    pub fn from_scores(suspect_id: impl Into<String>, scores: Vec<f64>, threshold: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyFingerprint { attempted: 0 });
        }
        let n = scores.len();
        let votes = scores.iter().filter(|&&s| s <= threshold).count();
        Ok(VerificationReport {
            suspect_id: suspect_id.into(),
            n,
            votes,
            fraction: votes as f64 / n as f64,
            verdict: majority_verdict(votes, n),
            threshold,
            scores,
        })
    }

    /// Same report re-evaluated at another threshold.
    pub fn rethreshold(&self, threshold: f64) -> VerificationReport {
        VerificationReport::from_scores(self.suspect_id.clone(), self.scores.clone(), threshold)
            .expect("report holds at least one score")
    }

    /// Report restricted to the first `n` fingerprints.
    pub fn truncated(&self, n: usize) -> Result<VerificationReport> {
        if n == 0 {
            return Err(Error::argument("need at least one sample"));
        }
        let take = n.min(self.scores.len());
        VerificationReport::from_scores(self.suspect_id.clone(), self.scores[..take].to_vec(), self.threshold)
    }
}

/// Fingerprints `suspect` on `test_seeds`, scores each spectrum and takes the majority vote.
///
/// Seeds where the attack fails are skipped; `max_samples` caps how many successful
/// fingerprints enter the vote (in seed order).
pub fn verify(
    meta: &MetaClassifier,
    suspect: &Model,
    suspect_id: &str,
    test_seeds: &[ImageTensor],
    options: &SpectrumOptions,
    max_samples: Option<usize>,
) -> Result<VerificationReport> {
    let tau = meta
        .threshold()
        .ok_or_else(|| Error::argument("meta-classifier has no calibrated threshold"))?;
    if test_seeds.is_empty() {
        return Err(Error::argument("no test seeds"));
    }
    if max_samples == Some(0) {
        return Err(Error::argument("num_samples must be >= 1"));
    }
    let mut set = generate_spectra(suspect, test_seeds, options)?;
    if let Some(cap) = max_samples {
        set.spectra.truncate(cap);
    }
    let scores = meta.scores(&set.spectra)?;
    VerificationReport::from_scores(suspect_id, scores, tau)
}

pub fn balanced_accuracy(tpr: f64, tnr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tpr) || !(0.0..=1.0).contains(&tnr) {
        return Err(Error::argument(format!("rates ({tpr}, {tnr}) outside [0, 1]")));
    }
    Ok((tpr + tnr) / 2.0)
}

/// Probability that a benign score exceeds a stolen score, ties counted one half,
/// computed from mid-ranks of the pooled sample.
pub fn roc_auc(stolen_scores: &[f64], benign_scores: &[f64]) -> Result<f64> {
    if stolen_scores.is_empty() || benign_scores.is_empty() {
        return Err(Error::argument("ROC AUC needs both stolen and benign scores"));
    }
    let mut pooled: Vec<(f64, bool)> = benign_scores
        .iter()
        .map(|&s| (s, true))
        .chain(stolen_scores.iter().map(|&s| (s, false)))
        .collect();
    if pooled.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::argument("NaN score"));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut benign_rank_sum = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        benign_rank_sum += pooled[i..=j].iter().filter(|p| p.1).count() as f64 * mid;
        i = j + 1;
    }
    let nb = benign_scores.len() as f64;
    let ns = stolen_scores.len() as f64;
    Ok((benign_rank_sum - nb * (nb + 1.0) / 2.0) / (nb * ns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tpr: f64,
    pub tnr: f64,
    pub ba: f64,
    /// Sample-level AUC over all per-fingerprint scores; `None` without both classes.
    pub roc_auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// Suspect-level rates from reports of stolen-side and benign-side suspects.
pub fn evaluate(positives: &[&VerificationReport], negatives: &[&VerificationReport]) -> Result<MetricsReport> {
    let rate = |rs: &[&VerificationReport], want: Verdict| -> f64 {
        if rs.is_empty() {
            0.0
        } else {
            rs.iter().filter(|r| r.verdict == want).count() as f64 / rs.len() as f64
        }
    };
    let tpr = rate(positives, Verdict::Stolen);
    let tnr = rate(negatives, Verdict::Benign);
    let stolen: Vec<f64> = positives.iter().flat_map(|r| r.scores.iter().copied()).collect();
    let benign: Vec<f64> = negatives.iter().flat_map(|r| r.scores.iter().copied()).collect();
    let roc = if stolen.is_empty() || benign.is_empty() {
        None
    } else {
        Some(roc_auc(&stolen, &benign)?)
    };
    Ok(MetricsReport {
        tpr,
        tnr,
        ba: balanced_accuracy(tpr, tnr)?,
        roc_auc: roc,
        positives: positives.len(),
        negatives: negatives.len(),
    })
}
