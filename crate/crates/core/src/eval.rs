//! Bipartite matching of predicted polygons to ground-truth objects and
//! mIoU reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{mask_iou, polygon_to_mask, Mask, Polygon16};
use crate::instruction::PolygonTuple;
use crate::{Error, Result};

/// Minimum-cost perfect assignment on a square `n × n` matrix (row-major).
/// Returns `col_of_row`.
pub fn hungarian(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!("cost matrix has {} entries, expected {}", cost.len(), n * n)));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::parameter("cost matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Shortest augmenting path with potentials, 1-based with a virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    Ok(col_of_row)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub assignments: Vec<Assignment>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    /// IoU per ground-truth object, 0 when unmatched.
    pub per_gt_iou: Vec<f64>,
    pub mean_iou: f64,
}

impl MatchResult {
    pub fn total_iou(&self) -> f64 {
        self.assignments.iter().map(|a| a.iou).sum()
    }
}

/// IoU of every prediction against every ground truth, row-major by prediction.
pub fn iou_matrix(preds: &[Mask], gts: &[Mask]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        for g in gts {
            out.push(mask_iou(p, g)?);
        }
    }
    Ok(out)
}

/// Optimal matching on a precomputed IoU matrix (`n_pred × n_gt`, row-major).
pub fn match_iou_matrix(iou: &[f64], n_pred: usize, n_gt: usize) -> Result<MatchResult> {
    if iou.len() != n_pred * n_gt {
        return Err(Error::Shape(format!("IoU matrix has {} entries, expected {}", iou.len(), n_pred * n_gt)));
    }
    let n = n_pred.max(n_gt);
    // Dummy rows and columns cost 1, the same as a disjoint pair.
    let mut cost = vec![1.0; n * n];
    for p in 0..n_pred {
        for g in 0..n_gt {
            cost[p * n + g] = 1.0 - iou[p * n_gt + g];
        }
    }
    let col_of_row = hungarian(&cost, n)?;
    let mut assignments = Vec::new();
    let mut per_gt_iou = vec![0.0; n_gt];
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    for (p, &g) in col_of_row.iter().enumerate().take(n_pred) {
        if g < n_gt && iou[p * n_gt + g] > 0.0 {
            let value = iou[p * n_gt + g];
            assignments.push(Assignment { prediction: p, ground_truth: g, iou: value });
            per_gt_iou[g] = value;
            pred_used[p] = true;
            gt_used[g] = true;
        }
    }
    let unmatched_predictions = (0..n_pred).filter(|&p| !pred_used[p]).collect();
    let unmatched_gts = (0..n_gt).filter(|&g| !gt_used[g]).collect();
    let mean_iou = if n_gt == 0 { 0.0 } else { per_gt_iou.iter().sum::<f64>() / n_gt as f64 };
    Ok(MatchResult { assignments, unmatched_predictions, unmatched_gts, per_gt_iou, mean_iou })
}

fn check_masks(gts: &[Mask], width: u32, height: u32) -> Result<()> {
    for (i, g) in gts.iter().enumerate() {
        if g.width() != width || g.height() != height {
            return Err(Error::Shape(format!(
                "ground truth {i} is {}x{}, expected {width}x{height}",
                g.width(),
                g.height()
            )));
        }
    }
    Ok(())
}

pub fn match_predictions(preds: &[Polygon16], gts: &[Mask], width: u32, height: u32) -> Result<MatchResult> {
    check_masks(gts, width, height)?;
    let pred_masks = preds.iter().map(|p| polygon_to_mask(p, width, height)).collect::<Result<Vec<_>>>()?;
    match_iou_matrix(&iou_matrix(&pred_masks, gts)?, preds.len(), gts.len())
}

/// Scores of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: String,
    pub fold: String,
    pub matching: MatchResult,
    /// Mean over ground-truth objects; unmatched objects count as 0.
    pub mean_iou: f64,
    /// IoU between the union of predicted masks and the union of gt masks.
    pub foreground_iou: f64,
}

pub fn score_episode(
    episode: &str,
    fold: &str,
    parsed: &PolygonTuple,
    gt_masks: &[Mask],
    size: (u32, u32),
) -> Result<EpisodeRecord> {
    let (width, height) = size;
    check_masks(gt_masks, width, height)?;
    let pred_masks = parsed.objects().iter().map(|p| polygon_to_mask(p, width, height)).collect::<Result<Vec<_>>>()?;
    let matching = match_iou_matrix(&iou_matrix(&pred_masks, gt_masks)?, pred_masks.len(), gt_masks.len())?;
    let union =
        |masks: &[Mask]| -> Result<Mask> { masks.iter().try_fold(Mask::new(width, height), |acc, m| acc.or(m)) };
    let foreground_iou = mask_iou(&union(&pred_masks)?, &union(gt_masks)?)?;
    Ok(EpisodeRecord {
        episode: episode.to_string(),
        fold: fold.to_string(),
        mean_iou: matching.mean_iou,
        matching,
        foreground_iou,
    })
}

/// Record for an episode without a usable prediction: every object is missed.
pub fn score_missing(episode: &str, fold: &str, gt_masks: &[Mask], size: (u32, u32)) -> Result<EpisodeRecord> {
    let (width, height) = size;
    check_masks(gt_masks, width, height)?;
    let matching = match_iou_matrix(&[], 0, gt_masks.len())?;
    let union = gt_masks.iter().try_fold(Mask::new(width, height), |acc, m| acc.or(m))?;
    let foreground_iou = mask_iou(&Mask::new(width, height), &union)?;
    Ok(EpisodeRecord {
        episode: episode.to_string(),
        fold: fold.to_string(),
        mean_iou: matching.mean_iou,
        matching,
        foreground_iou,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: String,
    pub episodes: usize,
    pub mean_iou: f64,
    pub foreground_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub folds: Vec<FoldSummary>,
    /// Mean of the fold means.
    pub mean_iou: f64,
    pub foreground_iou: f64,
    pub episodes: usize,
}

/// Per-fold and overall means. Folds are listed in sorted order.
pub fn aggregate(records: &[EpisodeRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::parameter("cannot aggregate zero episodes"));
    }
    let mut by_fold: BTreeMap<&str, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        by_fold.entry(r.fold.as_str()).or_default().push(r);
    }
    let folds: Vec<FoldSummary> = by_fold
        .into_iter()
        .map(|(fold, rs)| {
            let n = rs.len() as f64;
            FoldSummary {
                fold: fold.to_string(),
                episodes: rs.len(),
                mean_iou: rs.iter().map(|r| r.mean_iou).sum::<f64>() / n,
                foreground_iou: rs.iter().map(|r| r.foreground_iou).sum::<f64>() / n,
            }
        })
        .collect();
    let k = folds.len() as f64;
    Ok(Report {
        mean_iou: folds.iter().map(|f| f.mean_iou).sum::<f64>() / k,
        foreground_iou: folds.iter().map(|f| f.foreground_iou).sum::<f64>() / k,
        episodes: records.len(),
        folds,
    })
}

impl Report {
    /// Tab-separated summary: one line per fold, then `mean`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("fold\tepisodes\tmean_iou\tforeground_iou\n");
        for f in &self.folds {
            out.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\n", f.fold, f.episodes, f.mean_iou, f.foreground_iou));
        }
        out.push_str(&format!("mean\t{}\t{:.6}\t{:.6}\n", self.episodes, self.mean_iou, self.foreground_iou));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vertex;

    fn record(fold: &str, iou: f64) -> EpisodeRecord {
        EpisodeRecord {
            episode: "e".into(),
            fold: fold.into(),
            matching: match_iou_matrix(&[], 0, 0).unwrap(),
            mean_iou: iou,
            foreground_iou: iou,
        }
    }

    #[test]
    fn hungarian_small() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&cost, 3).unwrap();
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r * 3 + c]).sum();
        assert_eq!(total, 5.0);
        assert!(hungarian(&[1.0], 2).is_err());
        assert!(hungarian(&[], 0).unwrap().is_empty());
    }

    #[test]
    fn rectangular_and_zero_iou() {
        // Two preds, three gts; pred 1 overlaps nothing.
        let iou = [0.2, 0.9, 0.0, 0.0, 0.0, 0.0];
        let m = match_iou_matrix(&iou, 2, 3).unwrap();
        assert_eq!(m.assignments, vec![Assignment { prediction: 0, ground_truth: 1, iou: 0.9 }]);
        assert_eq!(m.unmatched_predictions, vec![1]);
        assert_eq!(m.unmatched_gts, vec![0, 2]);
        assert!((m.mean_iou - 0.3).abs() < 1e-12);
    }

    #[test]
    fn identical_prediction() {
        let vs: Vec<Vertex> = (0..16)
            .map(|k| {
                let t = k as f64 * std::f64::consts::PI / 8.0;
                Vertex::new((30.0 + 20.0 * t.cos()).round() as u32, (30.0 + 20.0 * t.sin()).round() as u32)
            })
            .collect();
        let p = Polygon16::from_slice(&vs).unwrap();
        let gt = polygon_to_mask(&p, 64, 64).unwrap();
        let m = match_predictions(&[p], std::slice::from_ref(&gt), 64, 64).unwrap();
        assert_eq!(m.assignments.len(), 1);
        assert_eq!(m.mean_iou, 1.0);
        let none = match_predictions(&[], &[gt.clone(), gt.clone()], 64, 64).unwrap();
        assert_eq!(none.unmatched_gts, vec![0, 1]);
        assert_eq!(none.mean_iou, 0.0);
        assert!(matches!(match_predictions(&[p], &[gt], 32, 64), Err(Error::Shape(_))));
    }

    #[test]
    fn aggregation() {
        let r = aggregate(&[record("0", 0.8)]).unwrap();
        assert!((r.mean_iou - 0.8).abs() < 1e-12);
        let r = aggregate(&[record("a", 1.0), record("b", 0.0), record("b", 0.0)]).unwrap();
        assert_eq!(r.folds[0].mean_iou, 1.0);
        assert_eq!(r.folds[1].mean_iou, 0.0);
        assert_eq!(r.mean_iou, 0.5);
        assert!(r.to_tsv().ends_with("mean\t3\t0.500000\t0.500000\n"));
        assert!(aggregate(&[]).is_err());
    }
}
