//! MPJPE and PA-MPJPE.
//!
//! MPJPE is computed on root-centred poses. PA-MPJPE fits one similarity per
//! frame (unlike the consistency loss, which fits one per sequence).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::types::PoseSequence3D;

fn check(pred: &PoseSequence3D, gt: &PoseSequence3D) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Shape("empty sequence".into()));
    }
    pred.check_same_shape(gt)
}

/// Per-frame mean root-centred joint error, in mm.
pub fn mpjpe_per_frame(
    pred: &PoseSequence3D,
    gt: &PoseSequence3D,
    root: usize,
) -> Result<Vec<f64>> {
    check(pred, gt)?;
    Ok(pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            let rp = p.joint(root);
            let rg = g.joint(root);
            let total: f64 = p
                .points()
                .zip(g.points())
                .map(|(a, b)| ((a - rp) - (b - rg)).norm())
                .sum();
            total / p.joint_count() as f64
        })
        .collect())
}

pub fn mpjpe(pred: &PoseSequence3D, gt: &PoseSequence3D, root: usize) -> Result<f64> {
    let frames = mpjpe_per_frame(pred, gt, root)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Per-frame mean joint error after aligning each predicted pose to its target.
pub fn pa_mpjpe_per_frame(pred: &PoseSequence3D, gt: &PoseSequence3D) -> Result<Vec<f64>> {
    check(pred, gt)?;
    pred.frames
        .iter()
        .zip(&gt.frames)
        .enumerate()
        .map(|(i, (p, g))| {
            let src: Vec<_> = p.points().collect();
            let tgt: Vec<_> = g.points().collect();
            let xf = geometry::fit_points(&src, &tgt).map_err(|e| match e {
                Error::Degenerate(msg) => Error::Degenerate(format!("frame {i}: {msg}")),
                other => other,
            })?;
            let total: f64 = src
                .iter()
                .zip(&tgt)
                .map(|(a, b)| (xf.apply_point(a) - b).norm())
                .sum();
            Ok(total / src.len() as f64)
        })
        .collect()
}

pub fn pa_mpjpe(pred: &PoseSequence3D, gt: &PoseSequence3D) -> Result<f64> {
    let frames = pa_mpjpe_per_frame(pred, gt)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityMetrics {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub per_activity: BTreeMap<String, ActivityMetrics>,
    pub frame_count: usize,
}

/// One evaluated sequence.
#[derive(Debug, Clone)]
pub struct Evaluated<'a> {
    pub activity: &'a str,
    pub pred: &'a PoseSequence3D,
    pub gt: &'a PoseSequence3D,
}

/// Per-activity and overall metrics; overall is the frame-weighted mean of activities.
pub fn evaluate(items: &[Evaluated<'_>], root: usize) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    // activity -> (sum mpjpe, sum pa, frames)
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for item in items {
        let m = mpjpe_per_frame(item.pred, item.gt, root)?;
        let pa = pa_mpjpe_per_frame(item.pred, item.gt)?;
        let entry = sums.entry(item.activity.to_string()).or_default();
        entry.0 += m.iter().sum::<f64>();
        entry.1 += pa.iter().sum::<f64>();
        entry.2 += m.len();
    }
    let per_activity: BTreeMap<String, ActivityMetrics> = sums
        .into_iter()
        .map(|(k, (m, pa, n))| {
            (
                k,
                ActivityMetrics {
                    mpjpe_mm: m / n as f64,
                    pa_mpjpe_mm: pa / n as f64,
                    frame_count: n,
                },
            )
        })
        .collect();
    let frame_count: usize = per_activity.values().map(|a| a.frame_count).sum();
    let weighted = |f: fn(&ActivityMetrics) -> f64| {
        per_activity
            .values()
            .map(|a| f(a) * a.frame_count as f64)
            .sum::<f64>()
            / frame_count as f64
    };
    Ok(MetricReport {
        mpjpe_mm: weighted(|a| a.mpjpe_mm),
        pa_mpjpe_mm: weighted(|a| a.pa_mpjpe_mm),
        per_activity,
        frame_count,
    })
}
