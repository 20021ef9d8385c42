//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvpose_core::data::{generate_dataset, read_dataset, write_dataset, Dataset};
use mvpose_core::geometry::{procrustes_fit, SimilarityTransform};
use mvpose_core::harness::{
    cell_plot, check_gradients, run_data_vs_loss_attribution, run_objective_comparison,
    run_view_count_ablation, write_outputs, CellSummary, ExperimentSpec, ResultTable,
};
use mvpose_core::losses::{
    combined_2d_loss, consistency_loss, consistency_pair_loss, reprojection_loss, LossWeights,
};
use mvpose_core::metrics::{mpjpe, pa_mpjpe};
use mvpose_core::model::{init_params, LifterConfig, LifterParams};
use mvpose_core::trainer::{element_loss, single_element, Objective, TrainConfig};
use mvpose_core::types::{MultiviewSample, Pose3D, PoseSequence3D, Skeleton};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_seq(rng: &mut ChaCha8Rng, n: usize, j: usize) -> PoseSequence3D {
    let frames = (0..n)
        .map(|_| {
            Pose3D::new(
                (0..j)
                    .map(|_| {
                        [
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                        ]
                    })
                    .collect(),
            )
        })
        .collect();
    PoseSequence3D::new(frames, 50.0)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    *UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .matrix()
}

fn random_similarity(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    let t = Vector3::new(
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(-3.0..3.0),
    );
    SimilarityTransform::new(rng.gen_range(0.3..3.0), random_rotation(rng), t)
}

// ---------------------------------------------------------------------------
// 1

/// Squared alignment error of `s * M p + t`, with `M` built from an unnormalized quaternion.
struct AlignCost {
    src: Vec<Vector3<f64>>,
    tgt: Vec<Vector3<f64>>,
}

impl AlignCost {
    fn eval(&self, p: &[f64]) -> f64 {
        let q = Quaternion::new(p[0], p[1], p[2], p[3]);
        if q.norm() < 1e-12 {
            return f64::INFINITY;
        }
        let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let s = p[4].exp();
        let t = Vector3::new(p[5], p[6], p[7]);
        self.src
            .iter()
            .zip(&self.tgt)
            .map(|(a, b)| (s * (m * a) + t - b).norm_squared())
            .sum()
    }
}

impl CostFunction for AlignCost {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.eval(p))
    }
}

fn numeric_minimum(
    src: &[Vector3<f64>],
    tgt: &[Vector3<f64>],
    rng: &mut ChaCha8Rng,
    starts: usize,
) -> f64 {
    let count = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / count;
    let mu_t = tgt.iter().sum::<Vector3<f64>>() / count;
    let spread = |pts: &[Vector3<f64>], mu: &Vector3<f64>| {
        pts.iter().map(|p| (p - mu).norm_squared()).sum::<f64>()
    };
    let log_s = (spread(tgt, &mu_t) / spread(src, &mu_s)).sqrt().ln();
    let mut best = f64::INFINITY;
    for _ in 0..starts {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            random_rotation(rng),
        ));
        let m = q.to_rotation_matrix();
        let t = mu_t - log_s.exp() * (m * mu_s);
        let x0 = vec![q.w, q.i, q.j, q.k, log_s, t.x, t.y, t.z];
        let steps = [0.3, 0.3, 0.3, 0.3, 0.2, 0.3, 0.3, 0.3];
        let mut simplex = vec![x0.clone()];
        for (k, h) in steps.iter().enumerate() {
            let mut v = x0.clone();
            v[k] += h;
            simplex.push(v);
        }
        let cost = AlignCost {
            src: src.to_vec(),
            tgt: tgt.to_vec(),
        };
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-15)
            .expect("simplex");
        let result = Executor::new(cost, solver)
            .configure(|s| s.max_iters(6000))
            .run()
            .expect("nelder-mead");
        best = best.min(result.state().get_best_cost());
    }
    best
}

fn closed_form_objective(
    xf: &SimilarityTransform,
    src: &[Vector3<f64>],
    tgt: &[Vector3<f64>],
) -> f64 {
    src.iter()
        .zip(tgt)
        .map(|(a, b)| (xf.apply_point(a) - b).norm_squared())
        .sum()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_det = 0.0f64;
    let mut failures = 0;
    for case in 0..200 {
        let mirrored = case >= 100;
        let (n, j) = (rng.gen_range(1..=8), rng.gen_range(4..=17));
        let a = random_seq(&mut rng, n, j);
        let noise = rng.gen_range(0.0..0.5);
        let g = random_similarity(&mut rng);
        let mut b = g.apply(&a);
        if mirrored {
            b = b.map_points(|p| Vector3::new(-p.x, p.y, p.z));
        }
        let noisy: Vec<f64> = b
            .to_flat()
            .iter()
            .map(|v| v + rng.gen_range(-noise..=noise))
            .collect();
        let b = PoseSequence3D::from_flat(&noisy, j, 50.0);
        let fit = match procrustes_fit(&a, &b) {
            Ok(f) => f,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let (src, tgt) = (a.stacked_points(), b.stacked_points());
        let fitted = closed_form_objective(&fit, &src, &tgt);
        let numeric = numeric_minimum(&src, &tgt, &mut rng, 6);
        let excess = (fitted - numeric) / numeric.abs().max(1e-300);
        worst_excess = worst_excess.max(excess);
        if fitted > numeric + 1e-6 * numeric.abs() {
            failures += 1;
        }
        let det_err = (fit.rotation.determinant() - 1.0).abs();
        worst_det = worst_det.max(det_err);
        if det_err > 1e-9 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("200 pairs (100 mirrored), worst (fit - numeric)/numeric {worst_excess:.2e}, worst |det - 1| {worst_det:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut self_worst = 0.0f64;
    let mut inv_worst = 0.0f64;
    for _ in 0..50 {
        let (n, j) = (rng.gen_range(1..=8), rng.gen_range(4..=17));
        let a = random_seq(&mut rng, n, j);
        let b = random_seq(&mut rng, n, j);
        let g = random_similarity(&mut rng);
        let ga = g.apply(&a);
        let own = consistency_pair_loss(&ga, &a).expect("pair loss").value;
        self_worst = self_worst.max(own.abs());
        let moved = consistency_pair_loss(&ga, &b).expect("pair loss").value;
        let base = consistency_pair_loss(&a, &b).expect("pair loss").value;
        inv_worst = inv_worst.max((moved - base).abs());
    }
    outcome(
        self_worst <= 1e-7 && inv_worst <= 1e-7,
        format!("50 cases, max pair_loss(gA, A) {self_worst:.1e}, max |pair_loss(gA, B) - pair_loss(A, B)| {inv_worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 3

fn criterion_3() -> Outcome {
    let required = [
        "consistency",
        "reprojection",
        "positional",
        "velocity",
        "scale",
        "smpl_shape",
        "smpl_pose",
    ];
    let checks = check_gradients(303, 20).expect("gradient checks");
    let mut ok = true;
    let mut worst_loss = 0.0f64;
    let mut worst_e2e = 0.0f64;
    for name in required {
        let Some(c) = checks.iter().find(|c| c.name == name) else {
            return outcome(false, format!("no gradient check named {name}"));
        };
        ok &= c.cases >= 20 && c.max_rel_err <= 1e-5;
        worst_loss = worst_loss.max(c.max_rel_err);
    }
    let e2e: Vec<_> = checks
        .iter()
        .filter(|c| c.name.starts_with("end_to_end"))
        .collect();
    ok &= !e2e.is_empty();
    for c in &e2e {
        ok &= c.cases >= 20 && c.max_rel_err <= 1e-4;
        worst_e2e = worst_e2e.max(c.max_rel_err);
    }
    outcome(
        ok,
        format!(
            "{} loss checks max rel err {worst_loss:.1e} (tol 1e-5), {} end-to-end checks max {worst_e2e:.1e} (tol 1e-4)",
            required.len(),
            e2e.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4

fn criterion_4() -> Outcome {
    let spec = ExperimentSpec::reference("compare-objectives").expect("spec");
    let (train, _) = spec.datasets().expect("datasets");
    let sample = train[0].subset(&[0, 1]).expect("subset");
    let w = spec.train.model.window_frames;
    let joints = sample.views[0].pose_2d.joint_count();

    // Zero parameters make every view predict the all-zero root-relative pose.
    let model = LifterConfig {
        hidden_sizes: vec![8],
        ..spec.train.model.clone()
    };
    let mut params = init_params(&model).expect("params");
    params.values.iter_mut().for_each(|v| *v = 0.0);
    let zeros = vec![PoseSequence3D::new(vec![Pose3D::zeros(joints); w], 50.0); 2];
    let con = consistency_loss(&zeros).expect("consistency").value;

    let element = single_element(
        sample
            .views
            .iter()
            .map(|v| (v.camera.clone(), v.pose_2d.window(0, w), None))
            .collect(),
    );
    let mut config = TrainConfig::fine_tune(Objective::L2Dcon, model);
    config.loss_unit_mm = spec.train.loss_unit_mm;
    let trained = element_loss(&params, &element, &config.setup(), None).expect("element loss");

    // The same zero poses hung at the true root so every joint is in front of the camera.
    let preds: Vec<_> = sample
        .views
        .iter()
        .map(|v| {
            let gt = v.pose_3d.as_ref().expect("labels").window(0, w);
            let frames = gt
                .frames
                .iter()
                .map(|f| Pose3D::new(vec![f.coords[0]; joints]))
                .collect();
            PoseSequence3D::new(frames, 50.0)
        })
        .collect();
    let gts: Vec<_> = sample
        .views
        .iter()
        .map(|v| v.pose_2d.window(0, w))
        .collect();
    let cams: Vec<_> = sample.views.iter().map(|v| v.camera.clone()).collect();
    let direct =
        combined_2d_loss(&preds, &gts, &cams, &LossWeights::default_2d()).expect("2d loss");
    let centred: Vec<_> = preds.iter().map(|p| p.root_centered(0)).collect();
    let rel_con = consistency_loss(&centred).expect("consistency").value;
    outcome(
        con == 0.0 && rel_con == 0.0 && trained.value > 0.0 && trained.components.con == 0.0 && direct.total.value > 0.0,
        format!(
            "consistency on zeros {con:.1e}; training objective {:.3e} (con {:.1e}); reproj + con at the root {:.3e}",
            trained.value, trained.components.con, direct.total.value
        ),
    )
}

// ---------------------------------------------------------------------------
// 5, 6, 7, 10

fn summary<'a>(rows: &'a [CellSummary], cell: &str) -> &'a CellSummary {
    rows.iter()
        .find(|s| s.cell == cell)
        .unwrap_or_else(|| panic!("no cell {cell}"))
}

fn criterion_5(table: &ResultTable, spec: &ExperimentSpec, elapsed: Duration) -> Outcome {
    let s = table.summarize();
    let (l2d, con) = (summary(&s, "L2D"), summary(&s, "L2Dcon"));
    let az: Vec<f64> = spec.view_subsets[0]
        .iter()
        .map(|v| spec.rig.azimuths_deg[*v])
        .collect();
    let setup_ok =
        az == [0.0, 90.0] && spec.train_motions.count >= 20 && spec.replicate_seeds.len() == 3;
    let ratio = con.median_pa_mpjpe_mm / l2d.median_pa_mpjpe_mm;
    outcome(
        setup_ok && ratio <= 0.7 && elapsed < Duration::from_secs(600),
        format!(
            "median PA-MPJPE L2Dcon {:.2} mm / L2D {:.2} mm = {ratio:.3} (need <= 0.7), {:.0} s",
            con.median_pa_mpjpe_mm,
            l2d.median_pa_mpjpe_mm,
            elapsed.as_secs_f64()
        ),
    )
}

fn view_change(table: &ResultTable, from: &str, to: &str) -> f64 {
    let s = table.summarize();
    summary(&s, from).median_mpjpe_mm - summary(&s, to).median_mpjpe_mm
}

fn criterion_6(table: &ResultTable, spec: &ExperimentSpec, elapsed: Duration) -> Outcome {
    let first = view_change(table, "k01", "k02");
    let second = view_change(table, "k02", "k03");
    let setup_ok = spec.view_subsets.len() == 7
        && table
            .rows
            .iter()
            .all(|r| r.lambda_con == 1.0 || r.view_count == 1);
    outcome(
        setup_ok && first >= 3.0 * second && elapsed < Duration::from_secs(1200),
        format!(
            "median MPJPE gain 1->2 views {first:.2} mm, 2->3 views {second:.2} mm (need first >= 3 x second), {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(with_con: &ResultTable, without: &ResultTable) -> Outcome {
    let reference = view_change(with_con, "k01", "k07");
    let plain = view_change(without, "k01", "k07");
    let zeroed = without.rows.iter().all(|r| r.lambda_con == 0.0);
    outcome(
        zeroed && plain.abs() <= 0.2 * reference.abs(),
        format!(
            "1->7 view MPJPE change {plain:.2} mm without consistency vs {reference:.2} mm with (ratio {:.3}, need <= 0.2)",
            plain.abs() / reference.abs()
        ),
    )
}

fn criterion_10(first: &ResultTable, spec: &ExperimentSpec) -> Outcome {
    let second = run_objective_comparison(spec).expect("second comparison run");
    let dir = tempfile::tempdir().expect("tempdir");
    let plot = cell_plot(first, "determinism");
    write_outputs(first, &plot, &dir.path().join("a")).expect("write");
    write_outputs(&second, &plot, &dir.path().join("b")).expect("write");
    let a = fs::read(dir.path().join("a/results.csv")).expect("read");
    let b = fs::read(dir.path().join("b/results.csv")).expect("read");
    outcome(
        a == b,
        format!(
            "two compare-objectives runs, results.csv {} bytes, identical: {}",
            a.len(),
            a == b
        ),
    )
}

// ---------------------------------------------------------------------------
// 8

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut violations = 0;
    for _ in 0..200 {
        let (n, j) = (rng.gen_range(1..=8), rng.gen_range(4..=17));
        let pred = random_seq(&mut rng, n, j).scaled(500.0);
        let gt = random_seq(&mut rng, n, j).scaled(500.0);
        if pa_mpjpe(&pred, &gt).expect("pa") > mpjpe(&pred, &gt, 0).expect("mpjpe") {
            violations += 1;
        }
    }

    let j = 17;
    let gt = random_seq(&mut rng, 4, j).scaled(500.0);
    let shifted = PoseSequence3D::new(
        gt.frames
            .iter()
            .map(|f| {
                Pose3D::new(
                    f.coords
                        .iter()
                        .enumerate()
                        .map(|(k, c)| {
                            if k == 0 {
                                *c
                            } else {
                                [c[0] + 3.0, c[1] + 4.0, c[2]]
                            }
                        })
                        .collect(),
                )
            })
            .collect(),
        50.0,
    );
    let analytic = 5.0 * (j - 1) as f64 / j as f64;
    let shift_err = (mpjpe(&shifted, &gt, 0).expect("mpjpe") - analytic).abs();

    let perturbed = PoseSequence3D::new(
        gt.frames
            .iter()
            .map(|f| {
                let g = random_similarity(&mut rng);
                f.map(|p| g.apply_point(&p))
            })
            .collect(),
        50.0,
    );
    let pa = pa_mpjpe(&perturbed, &gt).expect("pa");
    outcome(
        violations == 0 && shift_err <= 1e-9 && pa <= 1e-7,
        format!(
            "PA > MPJPE in {violations}/200 pairs; shift error vs analytic {analytic:.4} mm: {shift_err:.1e}; PA under per-frame similarity {pa:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut masked = 0;
    let mut datasets = 0;
    let mut round_trips_ok = true;
    let dir = tempfile::tempdir().expect("tempdir");
    for name in ExperimentSpec::reference_names() {
        let spec = ExperimentSpec::reference(name).expect("spec");
        let (train, eval) = spec.datasets().expect("datasets");
        let mut sets: Vec<Vec<MultiviewSample>> = vec![train, eval];
        if let Some(p) = &spec.pretrain {
            let rig = p.rig.as_ref().unwrap_or(&spec.rig);
            sets.push(
                generate_dataset(
                    rig,
                    &p.motions.expand().expect("motions"),
                    &Skeleton::h36m(),
                )
                .expect("pretraining data"),
            );
        }
        for (k, set) in sets.into_iter().enumerate() {
            datasets += 1;
            for sample in &set {
                for view in &sample.views {
                    let l = reprojection_loss(
                        view.pose_3d.as_ref().expect("labels"),
                        &view.pose_2d,
                        &view.camera,
                    )
                    .expect("reprojection");
                    worst = worst.max(l.value);
                    masked += l.masked;
                }
            }
            let path = dir.path().join(format!("{name}-{k}.json"));
            let dataset = Dataset::new(Skeleton::h36m(), set);
            write_dataset(&dataset, &path).expect("write");
            let back = read_dataset(&path).expect("read");
            let again = dir.path().join(format!("{name}-{k}-again.json"));
            write_dataset(&back, &again).expect("write");
            round_trips_ok &= back == dataset
                && fs::read(&path).expect("read") == fs::read(&again).expect("read");
        }
    }

    let spec = ExperimentSpec::reference("compare-objectives").expect("spec");
    let params = init_params(&spec.train.model).expect("params");
    let path = dir.path().join("params.json");
    params.save(&path).expect("save");
    let back = LifterParams::load(&path).expect("load");
    let bits = |p: &LifterParams| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let checkpoint_ok = back.config == params.config && bits(&back) == bits(&params);

    outcome(
        worst <= 1e-9 && masked == 0 && round_trips_ok && checkpoint_ok,
        format!(
            "{datasets} datasets, worst per-view reprojection of ground truth {worst:.1e}, masked joints {masked}; dataset round trip {round_trips_ok}, checkpoint round trip {checkpoint_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn report(results: &mut Vec<bool>, n: usize, name: &str, out: Outcome, elapsed: Duration) {
    println!(
        "criterion {n:>2} {name:<26} {}  {} [{:.1} s]",
        if out.passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    results.push(out.passed);
}

fn main() -> ExitCode {
    // Under `cargo test -- --list` and similar, report no tests instead of running the suite.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results = Vec::new();

    let (o, t) = timed(criterion_1);
    let o = outcome(o.passed && t < Duration::from_secs(30), o.detail);
    report(&mut results, 1, "procrustes optimality", o, t);

    let (o, t) = timed(criterion_2);
    let o = outcome(o.passed && t < Duration::from_secs(10), o.detail);
    report(&mut results, 2, "similarity invariance", o, t);

    let (o, t) = timed(criterion_3);
    let o = outcome(o.passed && t < Duration::from_secs(120), o.detail);
    report(&mut results, 3, "gradient suite", o, t);

    let (o, t) = timed(criterion_4);
    report(&mut results, 4, "degenerate solution", o, t);

    let compare = ExperimentSpec::reference("compare-objectives").expect("spec");
    let (comparison, t5) = timed(|| run_objective_comparison(&compare).expect("comparison"));
    report(
        &mut results,
        5,
        "objective direction",
        criterion_5(&comparison, &compare, t5),
        t5,
    );

    let views = ExperimentSpec::reference("view-count").expect("spec");
    let (with_con, t6) = timed(|| run_view_count_ablation(&views).expect("view count"));
    report(
        &mut results,
        6,
        "view-count plateau",
        criterion_6(&with_con, &views, t6),
        t6,
    );

    let (without, t7) = timed(|| run_data_vs_loss_attribution(&views).expect("attribution"));
    report(
        &mut results,
        7,
        "data vs loss attribution",
        criterion_7(&with_con, &without),
        t7,
    );

    let (o, t) = timed(criterion_8);
    report(&mut results, 8, "metric sanity", o, t);

    let (o, t) = timed(criterion_9);
    report(&mut results, 9, "pipeline consistency", o, t);

    let (o, t) = timed(|| criterion_10(&comparison, &compare));
    report(&mut results, 10, "determinism", o, t);

    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
