//! Adam training of the lifter under the four objectives.
//!
//! 3D losses are evaluated in `loss_unit_mm` units. The default of 2 m is about
//! one normalized image unit for a subject 4 m from a 1000 px camera, so the 3D
//! terms and the reprojection term weigh errors similarly.
//! Under 2D objectives each (window, view) gets a root depth `d0 * exp(rho)`;
//! `rho` is solved per step by a bounded 1D search on the reprojection loss
//! plus `root_depth_reg * rho^2`, and held fixed when differentiating.

mod adam;
mod batch;

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batch::{
    assemble_multiview_batch, epoch_windows, window_element, window_starts, BatchElement,
    ViewWindow, WindowRef,
};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::geometry::SimilarityTransform;
use crate::losses::{
    combined_3d_loss_with, consistency_loss_with, fit_alignments, reprojection_loss, scale_factors,
    FrozenAlignment, LossComponents, LossWeights,
};
use crate::metrics::{evaluate, Evaluated, MetricReport};
use crate::model::{
    backward, forward, init_params, predict_sequence, GradientBundle, LifterConfig, LifterParams,
};
use crate::types::{MultiviewSample, Pose3D, PoseSequence2D, PoseSequence3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    L3D,
    L3Dcon,
    L2D,
    L2Dcon,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::L3D,
        Objective::L3Dcon,
        Objective::L2D,
        Objective::L2Dcon,
    ];

    pub fn uses_3d(self) -> bool {
        matches!(self, Objective::L3D | Objective::L3Dcon)
    }

    pub fn uses_consistency(self) -> bool {
        matches!(self, Objective::L3Dcon | Objective::L2Dcon)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::L3D => "L3D",
            Objective::L3Dcon => "L3Dcon",
            Objective::L2D => "L2D",
            Objective::L2Dcon => "L2Dcon",
        }
    }

    /// The default weights for this objective.
    pub fn default_weights(self) -> LossWeights {
        if self.uses_3d() {
            LossWeights::default_3d()
        } else {
            LossWeights::default_2d()
        }
    }

    /// Zeroes the weights this objective does not use.
    pub fn effective_weights(self, w: &LossWeights) -> LossWeights {
        let mut out = *w;
        if self.uses_3d() {
            out.lambda_2d_reproj = 0.0;
        } else {
            out.lambda_pos = 0.0;
            out.lambda_vel = 0.0;
            out.lambda_scale = 0.0;
        }
        if !self.uses_consistency() {
            out.lambda_con = 0.0;
        }
        out
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub batch_windows: usize,
    /// Spacing of window starts; 1 visits every start.
    #[serde(default = "one")]
    pub window_stride: usize,
    pub weights: LossWeights,
    pub objective: Objective,
    pub seed: u64,
    pub model: LifterConfig,
    #[serde(default = "default_unit")]
    pub loss_unit_mm: f64,
    #[serde(default = "default_depth")]
    pub root_depth_prior_mm: f64,
    #[serde(default = "one_f")]
    pub root_depth_reg: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_unit() -> f64 {
    2000.0
}
fn default_depth() -> f64 {
    4000.0
}

/// Bound on `|rho|` for the per-window root depth search.
const MAX_LOG_DEPTH: f64 = 0.7;
const DEPTH_SEARCH_ITERS: usize = 48;

impl TrainConfig {
    /// 30 epochs at lr 2e-4 with Adam defaults and the objective's default weights.
    pub fn fine_tune(objective: Objective, model: LifterConfig) -> Self {
        Self {
            epochs: 30,
            learning_rate: 2e-4,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            batch_windows: 32,
            window_stride: 1,
            weights: objective.default_weights(),
            objective,
            seed: 0,
            model,
            loss_unit_mm: default_unit(),
            root_depth_prior_mm: default_depth(),
            root_depth_reg: one_f(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("adam beta {b} outside [0, 1)")));
            }
        }
        if !(self.adam_eps >= 0.0) || self.batch_windows == 0 || self.window_stride == 0 {
            return Err(Error::Invalid(
                "adam eps, batch size and stride must be valid".into(),
            ));
        }
        if !(self.loss_unit_mm > 0.0)
            || !(self.root_depth_prior_mm > 0.0)
            || !(self.root_depth_reg >= 0.0)
        {
            return Err(Error::Invalid(
                "loss unit, depth prior and depth regularizer must be positive".into(),
            ));
        }
        self.model.validate()?;
        self.objective.effective_weights(&self.weights).validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn setup(&self) -> LossSetup {
        LossSetup {
            objective: self.objective,
            weights: self.objective.effective_weights(&self.weights),
            loss_unit_mm: self.loss_unit_mm,
            root_depth_prior_mm: self.root_depth_prior_mm,
            root_depth_reg: self.root_depth_reg,
        }
    }
}

/// What [`element_loss`] needs from the training config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSetup {
    pub objective: Objective,
    /// Already filtered through [`Objective::effective_weights`].
    pub weights: LossWeights,
    pub loss_unit_mm: f64,
    pub root_depth_prior_mm: f64,
    pub root_depth_reg: f64,
}

/// Non-differentiated quantities of one element: pair alignments, per-view
/// per-frame scales and per-view log root depths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElementState {
    pub alignments: Vec<SimilarityTransform>,
    pub scales: Vec<Vec<f64>>,
    pub log_depths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementLoss {
    pub value: f64,
    pub components: LossComponents,
    pub grad: GradientBundle,
    pub state: ElementState,
}

/// Root positions per frame for a window: the 2D root back-projected at `depth`.
fn root_track(
    input: &PoseSequence2D,
    camera: &CameraModel,
    root: usize,
    depth: f64,
) -> Vec<Vector3<f64>> {
    input
        .frames
        .iter()
        .map(|f| camera.unproject(&Vector2::from(f.coords[root]), depth))
        .collect()
}

fn attach_root(rel: &PoseSequence3D, track: &[Vector3<f64>]) -> PoseSequence3D {
    PoseSequence3D::new(
        rel.frames
            .iter()
            .zip(track)
            .map(|(f, r)| f.map(|p| p + r))
            .collect(),
        rel.frame_rate_hz,
    )
}

/// Reprojection value only, for the depth search.
fn reprojection_value(
    rel: &PoseSequence3D,
    input: &PoseSequence2D,
    camera: &CameraModel,
    track: &[Vector3<f64>],
) -> f64 {
    let mut value = 0.0;
    let mut count = 0usize;
    for ((fp, fg), r) in rel.frames.iter().zip(&input.frames).zip(track) {
        for (j, p) in fp.points().enumerate() {
            count += 1;
            let c = fg.confidence[j];
            if c == 0.0 {
                continue;
            }
            if let Some(proj) = camera.project_point(&(p + r)) {
                value += c * (proj - Vector2::from(fg.coords[j])).norm();
            }
        }
    }
    value / count.max(1) as f64
}

/// Golden-section search for the log root depth.
fn solve_log_depth(rel: &PoseSequence3D, view: &ViewWindow, root: usize, setup: &LossSetup) -> f64 {
    let f = |rho: f64| {
        let track = root_track(
            &view.input,
            &view.camera,
            root,
            setup.root_depth_prior_mm * rho.exp(),
        );
        reprojection_value(rel, &view.input, &view.camera, &track)
            + setup.root_depth_reg * rho * rho
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-MAX_LOG_DEPTH, MAX_LOG_DEPTH);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..DEPTH_SEARCH_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Objective of one batch element and its parameter gradient.
///
/// With `frozen = None` alignments, scales and root depths are fitted at the
/// current predictions and returned in `state`; passing that state back in
/// evaluates the same function with those quantities held fixed.
pub fn element_loss(
    params: &LifterParams,
    element: &BatchElement,
    setup: &LossSetup,
    frozen: Option<&ElementState>,
) -> Result<ElementLoss> {
    let root = params.config.root_index;
    let unit = setup.loss_unit_mm;
    let w = &setup.weights;
    let n_views = element.views.len();
    if n_views == 0 {
        return Err(Error::Shape("batch element without views".into()));
    }

    let mut preds = Vec::with_capacity(n_views);
    let mut caches = Vec::with_capacity(n_views);
    for v in &element.views {
        let (out, cache) = forward(params, &v.input.frames)?;
        preds.push(PoseSequence3D::new(out, v.input.frame_rate_hz));
        caches.push(cache);
    }
    let preds_unit: Vec<PoseSequence3D> = preds.iter().map(|p| p.scaled(1.0 / unit)).collect();
    let use_con = w.lambda_con != 0.0 && n_views >= 2;

    let mut state = ElementState::default();
    let mut upstream: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| vec![0.0; p.len() * p.joint_count() * 3])
        .collect();
    let mut components = LossComponents::default();
    let value;

    if setup.objective.uses_3d() {
        let gts = element
            .views
            .iter()
            .map(|v| {
                v.gt_3d
                    .as_ref()
                    .map(|g| g.root_centered(root).scaled(1.0 / unit))
                    .ok_or_else(|| {
                        Error::MissingLabels(format!(
                            "view {} has no 3D ground truth",
                            v.view_index
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        match frozen {
            Some(f) => {
                state.alignments = f.alignments.clone();
                state.scales = f.scales.clone();
            }
            None => {
                if use_con {
                    state.alignments = fit_alignments(&preds_unit)?;
                }
                if w.lambda_scale != 0.0 {
                    state.scales = preds_unit
                        .iter()
                        .zip(&gts)
                        .map(|(p, g)| scale_factors(p, g, root))
                        .collect::<Result<_>>()?;
                }
            }
        }
        let mut weights = *w;
        if !use_con {
            weights.lambda_con = 0.0;
        }
        let fa = FrozenAlignment {
            pairs: state.alignments.clone(),
            scales: state.scales.clone(),
        };
        let l = combined_3d_loss_with(&preds_unit, &gts, &weights, root, &fa)?;
        for (u, g) in upstream.iter_mut().zip(&l.total.grads) {
            for (a, b) in u.iter_mut().zip(g) {
                *a += b / unit;
            }
        }
        components = l.components;
        value = l.total.value;
    } else {
        let views = n_views as f64;
        if w.lambda_2d_reproj != 0.0 {
            for (k, (v, rel)) in element.views.iter().zip(&preds).enumerate() {
                let rho = match frozen {
                    Some(f) => *f.log_depths.get(k).ok_or_else(|| {
                        Error::Shape(format!("no frozen root depth for view {k}"))
                    })?,
                    None => solve_log_depth(rel, v, root, setup),
                };
                state.log_depths.push(rho);
                let track = root_track(
                    &v.input,
                    &v.camera,
                    root,
                    setup.root_depth_prior_mm * rho.exp(),
                );
                let l = reprojection_loss(&attach_root(rel, &track), &v.input, &v.camera)?;
                components.reproj += l.value / views;
                for (a, b) in upstream[k].iter_mut().zip(l.grad()) {
                    *a += w.lambda_2d_reproj / views * b;
                }
            }
        }
        if use_con {
            state.alignments = match frozen {
                Some(f) => f.alignments.clone(),
                None => fit_alignments(&preds_unit)?,
            };
            let l = consistency_loss_with(&preds_unit, &state.alignments)?;
            components.con = l.value;
            for (u, g) in upstream.iter_mut().zip(&l.grads) {
                for (a, b) in u.iter_mut().zip(g) {
                    *a += w.lambda_con / unit * b;
                }
            }
        }
        value = w.lambda_2d_reproj * components.reproj + w.lambda_con * components.con;
    }

    let mut grad = vec![0.0; params.values.len()];
    for (cache, up) in caches.iter().zip(&upstream) {
        let (g, _) = backward(params, cache, up)?;
        for (a, b) in grad.iter_mut().zip(&g.values) {
            *a += b;
        }
    }
    Ok(ElementLoss {
        value,
        components,
        grad: GradientBundle { values: grad },
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub pos: f64,
    pub vel: f64,
    pub scale: f64,
    pub con: f64,
    pub reproj: f64,
    pub val_mpjpe_mm: Option<f64>,
    pub val_pa_mpjpe_mm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.entries.last()
    }
}

fn check_labels(samples: &[MultiviewSample], config: &TrainConfig) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    for s in samples {
        if s.views.is_empty() {
            return Err(Error::Invalid(format!(
                "sample `{}` has no views",
                s.sequence_id
            )));
        }
        if config.objective.uses_3d() {
            if let Some(v) = s.views.iter().find(|v| v.pose_3d.is_none()) {
                return Err(Error::MissingLabels(format!(
                    "{} needs 3D ground truth; `{}` view `{}` has none",
                    config.objective.name(),
                    s.sequence_id,
                    v.view_id
                )));
            }
        }
        for v in &s.views {
            if v.pose_2d.joint_count() != config.model.joint_count {
                return Err(Error::Shape(format!(
                    "`{}` view `{}` has {} joints, model expects {}",
                    s.sequence_id,
                    v.view_id,
                    v.pose_2d.joint_count(),
                    config.model.joint_count
                )));
            }
        }
    }
    Ok(())
}

/// Predicted (camera-frame, root-relative) sequences for every view that has 3D ground truth.
pub fn evaluate_lifter(params: &LifterParams, samples: &[MultiviewSample]) -> Result<MetricReport> {
    let root = params.config.root_index;
    let mut preds = Vec::new();
    for s in samples {
        for v in &s.views {
            if let Some(gt) = &v.pose_3d {
                preds.push((
                    s.activity.as_str(),
                    predict_sequence(params, &v.pose_2d)?,
                    gt,
                ));
            }
        }
    }
    if preds.is_empty() {
        return Err(Error::MissingLabels(
            "no evaluation view carries 3D ground truth".into(),
        ));
    }
    let items: Vec<Evaluated<'_>> = preds
        .iter()
        .map(|(activity, pred, gt)| Evaluated { activity, pred, gt })
        .collect();
    evaluate(&items, root)
}

/// Trains a fresh lifter. Deterministic given the config: batches are drawn from
/// a ChaCha stream seeded with `config.seed`, per-element gradients are summed in
/// batch order regardless of how rayon schedules them.
pub fn train(
    samples: &[MultiviewSample],
    validation: &[MultiviewSample],
    config: &TrainConfig,
) -> Result<(LifterParams, TrainLog)> {
    config.validate()?;
    train_from(init_params(&config.model)?, samples, validation, config)
}

/// Continues training from `initial` (fine-tuning); `config.model` must describe the same network
/// up to its init seed.
pub fn train_from(
    initial: LifterParams,
    samples: &[MultiviewSample],
    validation: &[MultiviewSample],
    config: &TrainConfig,
) -> Result<(LifterParams, TrainLog)> {
    config.validate()?;
    let mut expected = config.model.clone();
    expected.init_seed = initial.config.init_seed;
    if initial.config != expected || initial.values.len() != expected.parameter_count() {
        return Err(Error::Shape(
            "initial parameters do not match the configured lifter".into(),
        ));
    }
    check_labels(samples, config)?;
    let mut params = initial;
    let mut adam_state = AdamState::new(params.values.len());
    let adam_cfg = config.adam();
    let setup = config.setup();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let batches = assemble_multiview_batch(
            samples,
            config.model.window_frames,
            config.window_stride,
            config.batch_windows,
            &mut rng,
        )?;
        let mut total = 0.0;
        let mut comp = LossComponents::default();
        let mut elements = 0usize;
        for batch in &batches {
            let losses: Vec<ElementLoss> = batch
                .par_iter()
                .map(|e| element_loss(&params, e, &setup, None))
                .collect::<Result<_>>()?;
            let n = losses.len() as f64;
            let mut grad = vec![0.0; params.values.len()];
            for l in &losses {
                for (a, b) in grad.iter_mut().zip(&l.grad.values) {
                    *a += b / n;
                }
                total += l.value;
                comp.pos += l.components.pos;
                comp.vel += l.components.vel;
                comp.scale += l.components.scale;
                comp.con += l.components.con;
                comp.reproj += l.components.reproj;
            }
            elements += losses.len();
            adam_step(&mut params.values, &grad, &mut adam_state, &adam_cfg)?;
        }
        let m = elements.max(1) as f64;
        let report = if validation.is_empty() {
            None
        } else {
            Some(evaluate_lifter(&params, validation)?)
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            objective: total / m,
            pos: comp.pos / m,
            vel: comp.vel / m,
            scale: comp.scale / m,
            con: comp.con / m,
            reproj: comp.reproj / m,
            val_mpjpe_mm: report.as_ref().map(|r| r.mpjpe_mm),
            val_pa_mpjpe_mm: report.as_ref().map(|r| r.pa_mpjpe_mm),
        };
        if !entry.objective.is_finite() {
            return Err(Error::Invalid(format!(
                "objective diverged at epoch {}",
                epoch + 1
            )));
        }
        log.entries.push(entry);
    }
    Ok((params, log))
}

/// A training window built directly from per-view inputs, for gradient checks.
pub fn single_element(
    views: Vec<(CameraModel, PoseSequence2D, Option<PoseSequence3D>)>,
) -> BatchElement {
    BatchElement {
        sample: 0,
        start: 0,
        views: views
            .into_iter()
            .enumerate()
            .map(|(k, (camera, input, gt_3d))| ViewWindow {
                view_index: k,
                camera,
                input,
                gt_3d,
            })
            .collect(),
    }
}

/// Root-relative zero pose sequence, handy for shape checks.
pub fn zero_prediction(frames: usize, joints: usize, frame_rate_hz: f64) -> PoseSequence3D {
    PoseSequence3D::new(vec![Pose3D::zeros(joints); frames], frame_rate_hz)
}
