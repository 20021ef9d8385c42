//! Runtime self-checks exposed by the CLI: finite-difference gradient checks and
//! Procrustes recovery on random data.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::CameraModel;
use crate::error::Result;
use crate::geometry::{procrustes_fit, SimilarityTransform};
use crate::losses::{
    consistency_loss_with, fit_alignments, positional_loss, reprojection_loss, scale_factors,
    scale_loss_with, smpl_pose_consistency, smpl_shape_consistency, velocity_loss, LossWeights,
};
use crate::model::{init_params, LifterConfig};
use crate::trainer::{element_loss, single_element, LossSetup, Objective};
use crate::types::{Pose2D, Pose3D, PoseSequence2D, PoseSequence3D};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub cases: usize,
    /// Worst case of `max|analytic - numeric| / max|numeric|` over cases.
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Central differences of `f` at `x` along every coordinate.
pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * (1.0 + x[i].abs());
            y[i] = x[i] + h;
            let hi = f(&y);
            y[i] = x[i] - h;
            let lo = f(&y);
            y[i] = x[i];
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn random_seq(
    rng: &mut ChaCha8Rng,
    frames: usize,
    joints: usize,
    spread: f64,
    offset: [f64; 3],
) -> PoseSequence3D {
    PoseSequence3D::new(
        (0..frames)
            .map(|_| {
                Pose3D::new(
                    (0..joints)
                        .map(|_| {
                            [
                                offset[0] + rng.gen_range(-spread..spread),
                                offset[1] + rng.gen_range(-spread..spread),
                                offset[2] + rng.gen_range(-spread..spread),
                            ]
                        })
                        .collect(),
                )
            })
            .collect(),
        50.0,
    )
}

fn random_similarity(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let rotation = Rotation3::from_scaled_axis(axis * rng.gen_range(0.1..3.0)).into_inner();
    let translation = Vector3::new(
        rng.gen_range(-500.0..500.0),
        rng.gen_range(-500.0..500.0),
        rng.gen_range(-500.0..500.0),
    );
    SimilarityTransform::new(rng.gen_range(0.5..2.0), rotation, translation)
}

fn check(
    name: &str,
    cases: usize,
    tolerance: f64,
    mut case: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheck> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        worst = worst.max(case(rng)?);
    }
    Ok(GradCheck {
        name: name.to_string(),
        cases,
        max_rel_err: worst,
        tolerance,
    })
}

/// Gradient checks for every loss (alignments and scales frozen at the evaluation
/// point) and for the end-to-end training objectives through the lifter.
pub fn check_gradients(seed: u64, cases: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-6;
    let loss_tol = 1e-5;
    let mut out = Vec::new();

    out.push(check(
        "consistency",
        cases,
        loss_tol,
        |rng| {
            let views = rng.gen_range(2..4);
            let (n, j) = (rng.gen_range(1..5), rng.gen_range(4..9));
            let preds: Vec<_> = (0..views)
                .map(|_| random_seq(rng, n, j, 300.0, [0.0; 3]))
                .collect();
            let xf = fit_alignments(&preds)?;
            let l = consistency_loss_with(&preds, &xf)?;
            let mut worst = 0.0f64;
            for v in 0..views {
                let f = |x: &[f64]| {
                    let mut p = preds.clone();
                    p[v] = PoseSequence3D::from_flat(x, j, 50.0);
                    consistency_loss_with(&p, &xf)
                        .map(|l| l.value)
                        .unwrap_or(f64::NAN)
                };
                let num = numeric_gradient(&f, &preds[v].to_flat(), step);
                worst = worst.max(relative_error(&l.grads[v], &num));
            }
            Ok(worst)
        },
        &mut rng,
    )?);

    out.push(check(
        "reprojection",
        cases,
        loss_tol,
        |rng| {
            let (n, j) = (rng.gen_range(1..5), rng.gen_range(4..9));
            let cam = CameraModel::identity(1000.0, [1000, 1000]);
            let pred = random_seq(rng, n, j, 400.0, [0.0, 0.0, 4000.0]);
            let gt = PoseSequence2D::new(
                (0..n)
                    .map(|_| {
                        Pose2D::new(
                            (0..j)
                                .map(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)])
                                .collect(),
                            (0..j).map(|_| rng.gen_range(0.2..1.0)).collect(),
                        )
                    })
                    .collect(),
                50.0,
            );
            let l = reprojection_loss(&pred, &gt, &cam)?;
            let f = |x: &[f64]| {
                reprojection_loss(&PoseSequence3D::from_flat(x, j, 50.0), &gt, &cam)
                    .map(|l| l.value)
                    .unwrap_or(f64::NAN)
            };
            Ok(relative_error(
                l.grad(),
                &numeric_gradient(&f, &pred.to_flat(), step),
            ))
        },
        &mut rng,
    )?);

    type SeqLoss = fn(&PoseSequence3D, &PoseSequence3D) -> Result<crate::losses::LossValue>;
    for (name, loss, min_frames) in [
        ("positional", positional_loss as SeqLoss, 1usize),
        ("velocity", velocity_loss as SeqLoss, 2),
    ] {
        out.push(check(
            name,
            cases,
            loss_tol,
            |rng| {
                let (n, j) = (rng.gen_range(min_frames..6), rng.gen_range(4..9));
                let pred = random_seq(rng, n, j, 300.0, [0.0; 3]);
                let gt = random_seq(rng, n, j, 300.0, [0.0; 3]);
                let l = loss(&pred, &gt)?;
                let f = |x: &[f64]| {
                    loss(&PoseSequence3D::from_flat(x, j, 50.0), &gt)
                        .map(|l| l.value)
                        .unwrap_or(f64::NAN)
                };
                Ok(relative_error(
                    l.grad(),
                    &numeric_gradient(&f, &pred.to_flat(), step),
                ))
            },
            &mut rng,
        )?);
    }

    out.push(check(
        "scale",
        cases,
        loss_tol,
        |rng| {
            let (n, j) = (rng.gen_range(1..5), rng.gen_range(4..9));
            let pred = random_seq(rng, n, j, 300.0, [0.0; 3]);
            let gt = random_seq(rng, n, j, 300.0, [0.0; 3]);
            let scales = scale_factors(&pred, &gt, 0)?;
            let l = scale_loss_with(&pred, &gt, 0, &scales)?;
            let f = |x: &[f64]| {
                scale_loss_with(&PoseSequence3D::from_flat(x, j, 50.0), &gt, 0, &scales)
                    .map(|l| l.value)
                    .unwrap_or(f64::NAN)
            };
            Ok(relative_error(
                l.grad(),
                &numeric_gradient(&f, &pred.to_flat(), step),
            ))
        },
        &mut rng,
    )?);

    type ParamLoss = fn(&[Vec<f64>], &[Vec<f64>]) -> Result<crate::losses::LossValue>;
    for (name, loss, dim) in [
        ("smpl_shape", smpl_shape_consistency as ParamLoss, 10usize),
        ("smpl_pose", smpl_pose_consistency as ParamLoss, 72),
    ] {
        out.push(check(
            name,
            cases,
            loss_tol,
            |rng| {
                let n = rng.gen_range(1..4);
                let mut gen = || -> Vec<Vec<f64>> {
                    (0..n)
                        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect()
                };
                let (a, b) = (gen(), gen());
                let l = loss(&a, &b)?;
                let unflat = |x: &[f64]| x.chunks(dim).map(|c| c.to_vec()).collect::<Vec<_>>();
                let flat_a: Vec<f64> = a.concat();
                let flat_b: Vec<f64> = b.concat();
                let fa = |x: &[f64]| loss(&unflat(x), &b).map(|l| l.value).unwrap_or(f64::NAN);
                let fb = |x: &[f64]| loss(&a, &unflat(x)).map(|l| l.value).unwrap_or(f64::NAN);
                Ok(
                    relative_error(&l.grads[0], &numeric_gradient(&fa, &flat_a, step)).max(
                        relative_error(&l.grads[1], &numeric_gradient(&fb, &flat_b, step)),
                    ),
                )
            },
            &mut rng,
        )?);
    }

    for objective in [
        Objective::L3Dcon,
        Objective::L2Dcon,
        Objective::L2D,
        Objective::L3D,
    ] {
        out.push(check(
            &format!("end_to_end_{}", objective.name()),
            cases,
            1e-4,
            |rng| end_to_end_case(rng, objective),
            &mut rng,
        )?);
    }
    Ok(out)
}

/// Relative error of the lifter parameter gradient of one training objective.
fn end_to_end_case(rng: &mut ChaCha8Rng, objective: Objective) -> Result<f64> {
    let joints = 5;
    let frames = 3;
    let mut cfg = LifterConfig::new(frames, vec![8], joints, rng.gen());
    cfg.output_scale_mm = 300.0;
    let params = init_params(&cfg)?;
    let mut params = params;
    for v in params.values.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    let cams = [0.0f64, 90.0, 200.0].map(|az| {
        let a = az.to_radians();
        CameraModel::look_at(
            Vector3::new(4000.0 * a.cos(), 4000.0 * a.sin(), 1000.0),
            Vector3::new(0.0, 0.0, 900.0),
            Vector3::z(),
            1000.0,
            [1000, 1000],
        )
    });
    let world = random_seq(rng, frames, joints, 300.0, [0.0, 0.0, 900.0]);
    let views = cams
        .into_iter()
        .map(|cam| -> Result<_> {
            let cam = cam?;
            let gt = cam.world_to_camera(&world);
            let input = PoseSequence2D::new(
                gt.frames
                    .iter()
                    .map(|f| cam.project_to_normalized(f).pose)
                    .collect(),
                50.0,
            );
            Ok((cam, input, Some(gt)))
        })
        .collect::<Result<Vec<_>>>()?;
    let element = single_element(views);
    let weights = match objective {
        Objective::L3D | Objective::L3Dcon => LossWeights::default_3d(),
        _ => LossWeights::default_2d(),
    };
    let setup = LossSetup {
        objective,
        weights: objective.effective_weights(&weights),
        loss_unit_mm: 1000.0,
        root_depth_prior_mm: 4000.0,
        root_depth_reg: 1.0,
    };
    let at = element_loss(&params, &element, &setup, None)?;
    // a random subset of distinct parameters keeps the check fast
    let idx = rand::seq::index::sample(rng, params.values.len(), 24).into_vec();
    let x: Vec<f64> = idx.iter().map(|i| params.values[*i]).collect();
    let f = |x: &[f64]| {
        let mut p = params.clone();
        for (i, v) in idx.iter().zip(x) {
            p.values[*i] = *v;
        }
        element_loss(&p, &element, &setup, Some(&at.state))
            .map(|l| l.value)
            .unwrap_or(f64::NAN)
    };
    let analytic: Vec<f64> = idx.iter().map(|i| at.grad.values[*i]).collect();
    Ok(relative_error(&analytic, &numeric_gradient(&f, &x, 1e-6)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcrustesReport {
    pub cases: usize,
    /// Worst max-norm error of the recovered transform applied to the source.
    pub max_recovery_err: f64,
    /// Mirrored targets whose fitted rotation still had determinant +1.
    pub mirrored_proper: usize,
}

impl ProcrustesReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_recovery_err <= tolerance && self.mirrored_proper == self.cases
    }
}

/// Recovers random similarities exactly and keeps rotations proper on mirrored targets.
pub fn procrustes_selftest(seed: u64, cases: usize) -> Result<ProcrustesReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut proper = 0;
    for _ in 0..cases {
        let (n, j) = (rng.gen_range(1..9), rng.gen_range(4..18));
        let src = random_seq(&mut rng, n, j, 500.0, [0.0; 3]);
        let g = random_similarity(&mut rng);
        let dst = g.apply(&src);
        let fit = procrustes_fit(&src, &dst)?;
        let back = fit.apply(&src);
        for (a, b) in back.to_flat().iter().zip(dst.to_flat()) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
        let mirrored = dst.map_points(|p| Vector3::new(-p.x, p.y, p.z));
        if procrustes_fit(&src, &mirrored)?.is_proper(1e-9) {
            proper += 1;
        }
    }
    Ok(ProcrustesReport {
        cases,
        max_recovery_err: worst,
        mirrored_proper: proper,
    })
}
