//! Closed-form similarity alignment over whole pose sequences.
//!
//! Points are row vectors and transforms act as `s * p * R + t`; in column form
//! that is `s * R^T p + t`. A sequence of `n` frames with `J` joints is stacked
//! into a single cloud of `n * J` points and gets exactly one transform.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PoseSequence3D;

/// Ratio of the second-largest to the largest source spread below which a fit is refused.
pub const DEGENERACY_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Right-multiplied rotation (row-vector convention).
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            scale,
            rotation,
            translation,
        }
    }

    /// `s * p * R + t` for a column-stored point `p`.
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation.transpose() * p) + self.translation
    }

    pub fn apply(&self, seq: &PoseSequence3D) -> PoseSequence3D {
        seq.map_points(|p| self.apply_point(&p))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        // s1 (s2 p R2 + t2) R1 + t1
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: other.rotation * self.rotation,
            translation: self.apply_point(&other.translation),
        }
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.scale > 0.0
    }
}

/// Sum of squared distances between the transformed source and the target.
pub fn alignment_objective(
    xf: &SimilarityTransform,
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(s, t)| (xf.apply_point(s) - t).norm_squared())
        .sum()
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares similarity transform taking `source` onto `target`.
pub fn fit_points(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    let xf = fit_points_unconstrained(source, target)?;
    if !(xf.scale > 0.0) {
        return Err(Error::Degenerate(format!(
            "non-positive optimal scale {:.3e}: target has no correlated spread",
            xf.scale
        )));
    }
    Ok(xf)
}

/// Like [`fit_points`] but returns the closed-form scale even when it is not positive.
pub(crate) fn fit_points_unconstrained(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::Shape(format!(
            "point count {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::Shape("empty point set".into()));
    }
    let mu_s = centroid(source);
    let mu_t = centroid(target);

    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let x = s - mu_s;
        let y = t - mu_t;
        cross += x * y.transpose();
        spread += x * x.transpose();
        var_s += x.norm_squared();
    }

    let eig = spread.symmetric_eigenvalues();
    let mut ev = [eig[0].max(0.0), eig[1].max(0.0), eig[2].max(0.0)];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] < DEGENERACY_RATIO * ev[0] {
        return Err(Error::Degenerate(format!(
            "source point cloud is coincident or collinear (spread {:.3e}, {:.3e}, {:.3e})",
            ev[0], ev[1], ev[2]
        )));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let sigma = svd.singular_values;
    let smallest = (0..3)
        .min_by(|&a, &b| sigma[a].total_cmp(&sigma[b]))
        .unwrap_or(2);
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let trace: f64 = (0..3).map(|k| sigma[k] * d[k]).sum();
    let scale = trace / var_s;
    let translation = mu_t - scale * (rotation.transpose() * mu_s);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn check_pair(source: &PoseSequence3D, target: &PoseSequence3D) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Shape("empty sequence".into()));
    }
    source.check_same_shape(target)
}

/// One similarity transform for the whole sequence, aligning `source` onto `target`.
pub fn procrustes_fit(
    source: &PoseSequence3D,
    target: &PoseSequence3D,
) -> Result<SimilarityTransform> {
    check_pair(source, target)?;
    fit_points(&source.stacked_points(), &target.stacked_points())
}

pub fn apply_transform(xf: &SimilarityTransform, seq: &PoseSequence3D) -> PoseSequence3D {
    xf.apply(seq)
}

/// Per-frame, per-joint distances after the sequence-level fit.
pub fn aligned_residuals(
    source: &PoseSequence3D,
    target: &PoseSequence3D,
) -> Result<Vec<Vec<f64>>> {
    let xf = procrustes_fit(source, target)?;
    Ok(residuals_with(&xf, source, target))
}

/// Per-frame, per-joint distances under a given transform.
pub fn residuals_with(
    xf: &SimilarityTransform,
    source: &PoseSequence3D,
    target: &PoseSequence3D,
) -> Vec<Vec<f64>> {
    source
        .frames
        .iter()
        .zip(&target.frames)
        .map(|(a, b)| {
            a.points()
                .zip(b.points())
                .map(|(p, q)| (xf.apply_point(&p) - q).norm())
                .collect()
        })
        .collect()
}
