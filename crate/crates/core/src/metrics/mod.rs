//! Ranking metrics for binary detection scores and frame-to-video pooling.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{GrayMap, Raster};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredItem {
    pub score: f64,
    /// 1 = fake (positive), 0 = real.
    pub label: u8,
    pub video: Option<String>,
}

impl ScoredItem {
    pub fn new(score: f64, label: u8) -> Self {
        Self {
            score,
            label,
            video: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub items: Vec<ScoredItem>,
}

impl ScoredSet {
    pub fn from_pairs(scores: &[f64], labels: &[u8]) -> Self {
        Self {
            items: scores.iter().zip(labels).map(|(&s, &l)| ScoredItem::new(s, l)).collect(),
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|i| i.label == 1).count();
        (pos, self.items.len() - pos)
    }

    fn require_both(&self, metric: &str) -> Result<(usize, usize)> {
        let (p, n) = self.counts();
        if p == 0 || n == 0 {
            return Err(Error::UndefinedMetric(format!("{metric} needs both classes ({p} positive, {n} negative)")));
        }
        Ok((p, n))
    }

    /// Items sorted by descending score.
    fn sorted_desc(&self) -> Vec<&ScoredItem> {
        let mut v: Vec<&ScoredItem> = self.items.iter().collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score));
        v
    }
}

/// Groups of equal scores in descending order as (positives, negatives).
fn tie_groups(set: &ScoredSet) -> Vec<(usize, usize)> {
    let sorted = set.sorted_desc();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<f64> = None;
    for it in sorted {
        if last != Some(it.score) {
            groups.push((0, 0));
            last = Some(it.score);
        }
        let g = groups.last_mut().expect("group");
        if it.label == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Mann-Whitney estimate of `P(s+ > s-) + P(s+ = s-) / 2` via midranks.
pub fn auc(s: &ScoredSet) -> Result<f64> {
    let (p, n) = s.require_both("AUC")?;
    let mut groups = tie_groups(s);
    groups.reverse();
    let mut rank_sum = 0.0;
    let mut below = 0usize;
    for (gp, gn) in groups {
        let size = gp + gn;
        let midrank = below as f64 + (size as f64 + 1.0) / 2.0;
        rank_sum += gp as f64 * midrank;
        below += size;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p * n) as f64)
}

/// Step-wise average precision `sum_k (R_k - R_{k-1}) P_k` over distinct
/// score thresholds.
pub fn average_precision(s: &ScoredSet) -> Result<f64> {
    let (p, _) = s.counts();
    if p == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (gp, gn) in tie_groups(s) {
        tp += gp;
        fp += gn;
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Equal error rate: over thresholds at every distinct score (predict fake
/// when `score >= t`) plus one above all scores, pick the point minimizing
/// `|FPR - FNR|` and return `(FPR + FNR) / 2` there. Ties in the gap go to
/// the smaller average.
pub fn eer(s: &ScoredSet) -> Result<f64> {
    let (p, n) = s.require_both("EER")?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (1.0f64, 0.5f64); // threshold above everything: FPR 0, FNR 1
    for (gp, gn) in tie_groups(s) {
        tp += gp;
        fp += gn;
        let fpr = fp as f64 / n as f64;
        let fnr = (p - tp) as f64 / p as f64;
        let cand = ((fpr - fnr).abs(), (fpr + fnr) / 2.0);
        if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
            best = cand;
        }
    }
    Ok(best.1)
}

/// One item per video holding the mean frame score, in order of first
/// appearance.
pub fn video_level(frames: &ScoredSet) -> Result<ScoredSet> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, (f64, usize, u8)> = HashMap::new();
    for it in &frames.items {
        let v = it
            .video
            .clone()
            .ok_or_else(|| Error::Data("frame without a video id".into()))?;
        match acc.get_mut(&v) {
            Some(e) => {
                if e.2 != it.label {
                    return Err(Error::Data(format!("video {v} mixes real and fake frames")));
                }
                e.0 += it.score;
                e.1 += 1;
            }
            None => {
                acc.insert(v.clone(), (it.score, 1, it.label));
                order.push(v);
            }
        }
    }
    Ok(ScoredSet {
        items: order
            .into_iter()
            .map(|v| {
                let (sum, n, label) = acc[&v];
                ScoredItem {
                    score: sum / n as f64,
                    label,
                    video: Some(v),
                }
            })
            .collect(),
    })
}

/// One row of the per-frame scores file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub id: String,
    pub video: String,
    pub label: Option<u8>,
    pub score: f64,
}

pub fn write_scores_csv(path: impl AsRef<Path>, rows: &[FrameScore]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<FrameScore>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Labeled frames as a [`ScoredSet`]; `None` if any frame lacks a label.
pub fn labeled_set(rows: &[FrameScore]) -> Option<ScoredSet> {
    rows.iter()
        .map(|r| {
            r.label.map(|label| ScoredItem {
                score: r.score,
                label,
                video: Some(r.video.clone()),
            })
        })
        .collect::<Option<Vec<_>>>()
        .map(|items| ScoredSet { items })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub ap: f64,
    pub eer: f64,
    pub n_videos: usize,
    pub n_frames: usize,
}

/// Video-level AUC, AP and EER of labeled frame scores.
pub fn video_metrics(frames: &ScoredSet) -> Result<MetricsReport> {
    let videos = video_level(frames)?;
    Ok(MetricsReport {
        auc: auc(&videos)?,
        ap: average_precision(&videos)?,
        eer: eer(&videos)?,
        n_videos: videos.items.len(),
        n_frames: frames.items.len(),
    })
}

pub fn write_metrics_json(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// IoU between the lowest `fraction` of `heat` and the region `mask > 0.5`.
/// Ties at the cut-off value are all included.
pub fn low_region_iou(heat: &GrayMap, mask: &GrayMap, fraction: f64) -> Result<f64> {
    if heat.dims() != mask.dims() {
        return Err(Error::Dimension(format!("heatmap {:?} vs mask {:?}", heat.dims(), mask.dims())));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut sorted = heat.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    let k = ((fraction * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let cut = sorted[k - 1];
    let (mut inter, mut union) = (0usize, 0usize);
    for (&h, &m) in heat.data().iter().zip(mask.data()) {
        let (a, b) = (h <= cut, m > 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}
