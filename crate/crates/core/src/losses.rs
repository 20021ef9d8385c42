//! Training objectives with analytic gradients.
//!
//! Every loss returns a [`LossValue`] whose `grads[k]` is the gradient with respect
//! to the k-th prediction input, flattened frame-major as `(frame, joint, xyz)`.
//!
//! Alignment parameters (the pairwise similarity transforms of the consistency loss
//! and the per-frame scale of the scale loss) are treated as constants when
//! differentiating. The `*_with` variants take those parameters explicitly so the
//! exact function being differentiated can be evaluated at perturbed inputs.
//!
//! Distances are Euclidean per joint and averaged over frames and joints.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::{self, SimilarityTransform};
use crate::types::{view_pairs, PoseSequence2D, PoseSequence3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_pos: f64,
    pub lambda_vel: f64,
    pub lambda_scale: f64,
    pub lambda_con: f64,
    pub lambda_2d_reproj: f64,
}

impl LossWeights {
    /// 3D fine-tuning weights: pos 1, vel 20, scale 0.5, con 0.2.
    pub fn default_3d() -> Self {
        Self {
            lambda_pos: 1.0,
            lambda_vel: 20.0,
            lambda_scale: 0.5,
            lambda_con: 0.2,
            lambda_2d_reproj: 0.0,
        }
    }

    /// 2D fine-tuning weights with two views: reprojection 1, con 0.3.
    pub fn default_2d() -> Self {
        Self {
            lambda_pos: 0.0,
            lambda_vel: 0.0,
            lambda_scale: 0.0,
            lambda_con: 0.3,
            lambda_2d_reproj: 1.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            lambda_pos: 0.0,
            lambda_vel: 0.0,
            lambda_scale: 0.0,
            lambda_con: 0.0,
            lambda_2d_reproj: 0.0,
        }
    }

    pub fn with_con(mut self, lambda_con: f64) -> Self {
        self.lambda_con = lambda_con;
        self
    }

    fn all(&self) -> [f64; 5] {
        [
            self.lambda_pos,
            self.lambda_vel,
            self.lambda_scale,
            self.lambda_con,
            self.lambda_2d_reproj,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.all().iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid(format!(
                "loss weights must be finite and nonnegative: {self:?}"
            )));
        }
        if self.all().iter().all(|w| *w == 0.0) {
            return Err(Error::Invalid(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// One flattened gradient per prediction input.
    pub grads: Vec<Vec<f64>>,
    /// Joints excluded from the loss (nonpositive depth in reprojection).
    pub masked: usize,
}

impl LossValue {
    fn new(value: f64, grads: Vec<Vec<f64>>) -> Self {
        Self {
            value,
            grads,
            masked: 0,
        }
    }

    /// Gradient with respect to the single prediction input.
    pub fn grad(&self) -> &[f64] {
        &self.grads[0]
    }
}

/// Unit residual direction; zero at zero distance.
fn unit(r: Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = r.norm();
    if d > 0.0 {
        (d, r / d)
    } else {
        (0.0, Vector3::zeros())
    }
}

fn add3(buf: &mut [f64], offset: usize, v: &Vector3<f64>) {
    buf[offset] += v.x;
    buf[offset + 1] += v.y;
    buf[offset + 2] += v.z;
}

fn nonempty(seq: &PoseSequence3D) -> Result<()> {
    if seq.is_empty() || seq.joint_count() == 0 {
        return Err(Error::Shape("empty pose sequence".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// consistency

/// Sequence-level alignment used by the consistency loss.
///
/// Extends [`geometry::procrustes_fit`] to the two cases where the least-squares
/// optimum is unique in value but not a proper similarity: a coincident source
/// (translation only) and a target with no positively correlated spread (scale 0,
/// everything maps to the target centroid). Collinear sources still fail.
pub fn pair_alignment(a: &PoseSequence3D, b: &PoseSequence3D) -> Result<SimilarityTransform> {
    nonempty(a)?;
    a.check_same_shape(b)?;
    let src = a.stacked_points();
    let tgt = b.stacked_points();
    let count = src.len() as f64;
    let mu_a = src.iter().sum::<Vector3<f64>>() / count;
    let mu_b = tgt.iter().sum::<Vector3<f64>>() / count;
    if src.iter().all(|p| *p == mu_a) {
        return Ok(SimilarityTransform::new(
            1.0,
            Matrix3::identity(),
            mu_b - mu_a,
        ));
    }
    let xf = geometry::fit_points_unconstrained(&src, &tgt)?;
    if xf.scale > 0.0 {
        Ok(xf)
    } else {
        Ok(SimilarityTransform::new(0.0, Matrix3::identity(), mu_b))
    }
}

/// Consistency between two views under a fixed alignment of `a` onto `b`.
pub fn consistency_pair_loss_with(
    xf: &SimilarityTransform,
    a: &PoseSequence3D,
    b: &PoseSequence3D,
) -> Result<LossValue> {
    nonempty(a)?;
    a.check_same_shape(b)?;
    let joints = a.joint_count();
    let count = (a.len() * joints) as f64;
    let mut grad_a = vec![0.0; a.len() * joints * 3];
    let mut grad_b = vec![0.0; grad_a.len()];
    let back = xf.scale * xf.rotation;
    let mut total = 0.0;
    for (i, (fa, fb)) in a.frames.iter().zip(&b.frames).enumerate() {
        for (j, (p, q)) in fa.points().zip(fb.points()).enumerate() {
            let (d, u) = unit(xf.apply_point(&p) - q);
            total += d;
            let off = (i * joints + j) * 3;
            add3(&mut grad_a, off, &(back * u / count));
            add3(&mut grad_b, off, &(-u / count));
        }
    }
    Ok(LossValue::new(total / count, vec![grad_a, grad_b]))
}

/// Mean aligned joint distance between two predicted sequences of the same motion.
pub fn consistency_pair_loss(a: &PoseSequence3D, b: &PoseSequence3D) -> Result<LossValue> {
    let xf = pair_alignment(a, b)?;
    consistency_pair_loss_with(&xf, a, b)
}

/// Alignments for every canonical view pair, in [`view_pairs`] order.
pub fn fit_alignments(preds: &[PoseSequence3D]) -> Result<Vec<SimilarityTransform>> {
    if preds.len() < 2 {
        return Err(Error::TooFewViews(preds.len()));
    }
    view_pairs(preds.len())
        .into_iter()
        .map(|(a, b)| pair_alignment(&preds[a], &preds[b]))
        .collect()
}

pub fn consistency_loss_with(
    preds: &[PoseSequence3D],
    alignments: &[SimilarityTransform],
) -> Result<LossValue> {
    let pairs = view_pairs(preds.len());
    if preds.len() < 2 {
        return Err(Error::TooFewViews(preds.len()));
    }
    if alignments.len() != pairs.len() {
        return Err(Error::Shape(format!(
            "{} alignments for {} view pairs",
            alignments.len(),
            pairs.len()
        )));
    }
    let mut grads: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| vec![0.0; p.len() * p.joint_count() * 3])
        .collect();
    let norm = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    for ((a, b), xf) in pairs.into_iter().zip(alignments) {
        let pair = consistency_pair_loss_with(xf, &preds[a], &preds[b])?;
        value += pair.value * norm;
        for (g, d) in grads[a].iter_mut().zip(&pair.grads[0]) {
            *g += d * norm;
        }
        for (g, d) in grads[b].iter_mut().zip(&pair.grads[1]) {
            *g += d * norm;
        }
    }
    Ok(LossValue::new(value, grads))
}

/// Mean pair loss over all canonical view pairs of one sample.
pub fn consistency_loss(preds: &[PoseSequence3D]) -> Result<LossValue> {
    let alignments = fit_alignments(preds)?;
    consistency_loss_with(preds, &alignments)
}

/// Sum of per-sample consistency losses; per-sample gradients returned alongside.
pub fn consistency_loss_batch(samples: &[Vec<PoseSequence3D>]) -> Result<(f64, Vec<LossValue>)> {
    let per_sample = samples
        .iter()
        .map(|views| consistency_loss(views))
        .collect::<Result<Vec<_>>>()?;
    let total = per_sample.iter().map(|l| l.value).sum();
    Ok((total, per_sample))
}

// ---------------------------------------------------------------------------
// 2D

/// Confidence-weighted mean 2D distance between projected predictions and labels.
pub fn reprojection_loss(
    pred: &PoseSequence3D,
    gt: &PoseSequence2D,
    cam: &CameraModel,
) -> Result<LossValue> {
    nonempty(pred)?;
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "frame count {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let joints = pred.joint_count();
    let count = (pred.len() * joints) as f64;
    let mut grad = vec![0.0; pred.len() * joints * 3];
    let mut value = 0.0;
    let mut masked = 0;
    for (i, (fp, fg)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        if fp.joint_count() != joints || fg.joint_count() != joints || fg.confidence.len() != joints
        {
            return Err(Error::Shape(format!("frame {i}: joint count mismatch")));
        }
        for (j, p) in fp.points().enumerate() {
            let c = fg.confidence[j];
            if c == 0.0 {
                continue;
            }
            let Some(proj) = cam.project_point(&p) else {
                masked += 1;
                continue;
            };
            let r = proj - Vector2::from(fg.coords[j]);
            let d = r.norm();
            value += c * d;
            if d > 0.0 {
                let jac = cam.projection_jacobian(&p)?;
                let g = jac.transpose() * (r * (c / (d * count)));
                add3(&mut grad, (i * joints + j) * 3, &g);
            }
        }
    }
    Ok(LossValue {
        value: value / count,
        grads: vec![grad],
        masked,
    })
}

// ---------------------------------------------------------------------------
// 3D supervision

/// Mean per-joint Euclidean distance.
pub fn positional_loss(pred: &PoseSequence3D, gt: &PoseSequence3D) -> Result<LossValue> {
    nonempty(pred)?;
    pred.check_same_shape(gt)?;
    let joints = pred.joint_count();
    let count = (pred.len() * joints) as f64;
    let mut grad = vec![0.0; pred.len() * joints * 3];
    let mut value = 0.0;
    for (i, (fp, fg)) in pred.frames.iter().zip(&gt.frames).enumerate() {
        for (j, (p, g)) in fp.points().zip(fg.points()).enumerate() {
            let (d, u) = unit(p - g);
            value += d;
            add3(&mut grad, (i * joints + j) * 3, &(u / count));
        }
    }
    Ok(LossValue::new(value / count, vec![grad]))
}

/// Mean distance between predicted and true per-joint frame-to-frame displacements.
pub fn velocity_loss(pred: &PoseSequence3D, gt: &PoseSequence3D) -> Result<LossValue> {
    nonempty(pred)?;
    pred.check_same_shape(gt)?;
    if pred.len() < 2 {
        return Err(Error::Shape(format!(
            "velocity loss needs at least 2 frames, got {}",
            pred.len()
        )));
    }
    let joints = pred.joint_count();
    let count = ((pred.len() - 1) * joints) as f64;
    let mut grad = vec![0.0; pred.len() * joints * 3];
    let mut value = 0.0;
    for i in 1..pred.len() {
        for j in 0..joints {
            let dp = pred.frames[i].joint(j) - pred.frames[i - 1].joint(j);
            let dg = gt.frames[i].joint(j) - gt.frames[i - 1].joint(j);
            let (d, u) = unit(dp - dg);
            value += d;
            add3(&mut grad, (i * joints + j) * 3, &(u / count));
            add3(&mut grad, ((i - 1) * joints + j) * 3, &(-u / count));
        }
    }
    Ok(LossValue::new(value / count, vec![grad]))
}

/// Per-frame least-squares scale taking the root-centred prediction onto the root-centred target.
pub fn scale_factors(pred: &PoseSequence3D, gt: &PoseSequence3D, root: usize) -> Result<Vec<f64>> {
    nonempty(pred)?;
    pred.check_same_shape(gt)?;
    pred.frames
        .iter()
        .zip(&gt.frames)
        .enumerate()
        .map(|(i, (fp, fg))| {
            let rp = fp.joint(root);
            let rg = fg.joint(root);
            let (mut pp, mut pg) = (0.0, 0.0);
            for (p, g) in fp.points().zip(fg.points()) {
                let a = p - rp;
                pp += a.norm_squared();
                pg += a.dot(&(g - rg));
            }
            if pp == 0.0 {
                Err(Error::Degenerate(format!(
                    "frame {i}: root-centred prediction is all zero"
                )))
            } else {
                Ok(pg / pp)
            }
        })
        .collect()
}

/// Scale loss under fixed per-frame scales.
pub fn scale_loss_with(
    pred: &PoseSequence3D,
    gt: &PoseSequence3D,
    root: usize,
    scales: &[f64],
) -> Result<LossValue> {
    nonempty(pred)?;
    pred.check_same_shape(gt)?;
    if scales.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} scales for {} frames",
            scales.len(),
            pred.len()
        )));
    }
    let joints = pred.joint_count();
    let count = (pred.len() * joints) as f64;
    let mut grad = vec![0.0; pred.len() * joints * 3];
    let mut value = 0.0;
    for (i, ((fp, fg), &sigma)) in pred.frames.iter().zip(&gt.frames).zip(scales).enumerate() {
        let rp = fp.joint(root);
        let rg = fg.joint(root);
        let mut root_grad = Vector3::zeros();
        for (j, (p, g)) in fp.points().zip(fg.points()).enumerate() {
            let (d, u) = unit(sigma * (p - rp) - (g - rg));
            value += d;
            let gj = u * (sigma / count);
            add3(&mut grad, (i * joints + j) * 3, &gj);
            root_grad -= gj;
        }
        add3(&mut grad, (i * joints + root) * 3, &root_grad);
    }
    Ok(LossValue::new(value / count, vec![grad]))
}

/// Root-centred positional loss after optimal per-frame rescaling of the prediction.
pub fn scale_loss(pred: &PoseSequence3D, gt: &PoseSequence3D, root: usize) -> Result<LossValue> {
    let scales = scale_factors(pred, gt, root)?;
    scale_loss_with(pred, gt, root, &scales)
}

// ---------------------------------------------------------------------------
// parameter-space consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmplParams {
    /// Shape coefficients per frame (10 each).
    pub betas: Vec<Vec<f64>>,
    /// Axis-angle pose parameters per frame (72 each).
    pub thetas: Vec<Vec<f64>>,
}

fn mean_vector_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<LossValue> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "parameter sequence lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut grad_a = Vec::new();
    let mut grad_b = Vec::new();
    let mut value = 0.0;
    for (i, (va, vb)) in a.iter().zip(b).enumerate() {
        if va.len() != vb.len() {
            return Err(Error::Shape(format!(
                "entry {i}: vector length {} vs {}",
                va.len(),
                vb.len()
            )));
        }
        let d = va
            .iter()
            .zip(vb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        value += d;
        for (x, y) in va.iter().zip(vb) {
            let g = if d > 0.0 { (x - y) / (d * n) } else { 0.0 };
            grad_a.push(g);
            grad_b.push(-g);
        }
    }
    Ok(LossValue::new(value / n, vec![grad_a, grad_b]))
}

/// Mean distance between per-frame shape coefficient vectors; no alignment.
pub fn smpl_shape_consistency(betas_a: &[Vec<f64>], betas_b: &[Vec<f64>]) -> Result<LossValue> {
    mean_vector_distance(betas_a, betas_b)
}

/// Mean distance between per-frame pose parameter vectors; no alignment.
pub fn smpl_pose_consistency(thetas_a: &[Vec<f64>], thetas_b: &[Vec<f64>]) -> Result<LossValue> {
    mean_vector_distance(thetas_a, thetas_b)
}

// ---------------------------------------------------------------------------
// combined objectives

/// Alignment parameters held constant during differentiation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenAlignment {
    /// Per canonical view pair; empty when the consistency term is skipped.
    pub pairs: Vec<SimilarityTransform>,
    /// Per view, per frame scale; empty when the scale term is skipped.
    pub scales: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pos: f64,
    pub vel: f64,
    pub scale: f64,
    pub con: f64,
    pub reproj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: LossValue,
    /// Unweighted component values (0 for skipped terms).
    pub components: LossComponents,
}

fn accumulate(grads: &mut [Vec<f64>], view: usize, weight: f64, g: &[f64]) {
    for (acc, v) in grads[view].iter_mut().zip(g) {
        *acc += weight * v;
    }
}

fn zero_grads(preds: &[PoseSequence3D]) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|p| vec![0.0; p.len() * p.joint_count() * 3])
        .collect()
}

/// Alignment parameters for [`combined_3d_loss_with`] at the given predictions.
pub fn freeze_3d(
    preds: &[PoseSequence3D],
    gts: &[PoseSequence3D],
    weights: &LossWeights,
    root: usize,
) -> Result<FrozenAlignment> {
    let pairs = if weights.lambda_con != 0.0 && preds.len() >= 2 {
        fit_alignments(preds)?
    } else {
        Vec::new()
    };
    let scales = if weights.lambda_scale != 0.0 {
        preds
            .iter()
            .zip(gts)
            .map(|(p, g)| scale_factors(p, g, root))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(FrozenAlignment { pairs, scales })
}

/// `λ_pos L_pos + λ_vel L_vel + λ_scale L_scale + λ_con L_con`; supervised terms averaged over views.
pub fn combined_3d_loss_with(
    preds: &[PoseSequence3D],
    gts: &[PoseSequence3D],
    weights: &LossWeights,
    root: usize,
    frozen: &FrozenAlignment,
) -> Result<CombinedLoss> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} predicted views vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    let views = preds.len() as f64;
    let mut grads = zero_grads(preds);
    let mut c = LossComponents::default();
    for (v, (p, g)) in preds.iter().zip(gts).enumerate() {
        if weights.lambda_pos != 0.0 {
            let l = positional_loss(p, g)?;
            c.pos += l.value / views;
            accumulate(&mut grads, v, weights.lambda_pos / views, l.grad());
        }
        if weights.lambda_vel != 0.0 {
            let l = velocity_loss(p, g)?;
            c.vel += l.value / views;
            accumulate(&mut grads, v, weights.lambda_vel / views, l.grad());
        }
        if weights.lambda_scale != 0.0 {
            let scales = frozen
                .scales
                .get(v)
                .ok_or_else(|| Error::Shape(format!("no frozen scales for view {v}")))?;
            let l = scale_loss_with(p, g, root, scales)?;
            c.scale += l.value / views;
            accumulate(&mut grads, v, weights.lambda_scale / views, l.grad());
        }
    }
    if weights.lambda_con != 0.0 && preds.len() >= 2 {
        let l = consistency_loss_with(preds, &frozen.pairs)?;
        c.con = l.value;
        for (v, g) in l.grads.iter().enumerate() {
            accumulate(&mut grads, v, weights.lambda_con, g);
        }
    }
    let value = weights.lambda_pos * c.pos
        + weights.lambda_vel * c.vel
        + weights.lambda_scale * c.scale
        + weights.lambda_con * c.con;
    Ok(CombinedLoss {
        total: LossValue::new(value, grads),
        components: c,
    })
}

pub fn combined_3d_loss(
    preds: &[PoseSequence3D],
    gts: &[PoseSequence3D],
    weights: &LossWeights,
    root: usize,
) -> Result<CombinedLoss> {
    let frozen = freeze_3d(preds, gts, weights, root)?;
    combined_3d_loss_with(preds, gts, weights, root, &frozen)
}

/// `λ_2Dreproj L_reproj + λ_con L_con`; reprojection averaged over views.
pub fn combined_2d_loss_with(
    preds: &[PoseSequence3D],
    gts: &[PoseSequence2D],
    cams: &[CameraModel],
    weights: &LossWeights,
    alignments: &[SimilarityTransform],
) -> Result<CombinedLoss> {
    if preds.is_empty() || preds.len() != gts.len() || preds.len() != cams.len() {
        return Err(Error::Shape(format!(
            "{} predicted views, {} 2D targets, {} cameras",
            preds.len(),
            gts.len(),
            cams.len()
        )));
    }
    let views = preds.len() as f64;
    let mut grads = zero_grads(preds);
    let mut c = LossComponents::default();
    let mut masked = 0;
    if weights.lambda_2d_reproj != 0.0 {
        for (v, ((p, g), cam)) in preds.iter().zip(gts).zip(cams).enumerate() {
            let l = reprojection_loss(p, g, cam)?;
            c.reproj += l.value / views;
            masked += l.masked;
            accumulate(&mut grads, v, weights.lambda_2d_reproj / views, l.grad());
        }
    }
    if weights.lambda_con != 0.0 && preds.len() >= 2 {
        let l = consistency_loss_with(preds, alignments)?;
        c.con = l.value;
        for (v, g) in l.grads.iter().enumerate() {
            accumulate(&mut grads, v, weights.lambda_con, g);
        }
    }
    let value = weights.lambda_2d_reproj * c.reproj + weights.lambda_con * c.con;
    Ok(CombinedLoss {
        total: LossValue {
            value,
            grads,
            masked,
        },
        components: c,
    })
}

pub fn combined_2d_loss(
    preds: &[PoseSequence3D],
    gts: &[PoseSequence2D],
    cams: &[CameraModel],
    weights: &LossWeights,
) -> Result<CombinedLoss> {
    let alignments = if weights.lambda_con != 0.0 && preds.len() >= 2 {
        fit_alignments(preds)?
    } else {
        Vec::new()
    };
    combined_2d_loss_with(preds, gts, cams, weights, &alignments)
}
