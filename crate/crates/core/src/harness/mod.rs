//! Experiment drivers: objective comparison, view-count and view-selection
//! ablations, and the data-versus-loss attribution run.
//!
//! Every (cell, seed) pair is trained from scratch on the same synthetic
//! training motions restricted to the cell's cameras, then evaluated on
//! held-out motions seen from the spec's evaluation cameras only.

mod plot;
mod selftest;
mod table;

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use plot::{embedded_points, LinePlot, Series};
pub use selftest::{
    check_gradients, numeric_gradient, procrustes_selftest, relative_error, GradCheck,
    ProcrustesReport,
};
pub use table::{median, CellSummary, ResultRow, ResultTable};

use crate::data::{generate_dataset, parse_versioned, MotionSpec, RigSpec};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::LifterParams;
use crate::trainer::{evaluate_lifter, train, train_from, Objective, TrainConfig};
use crate::types::{MultiviewSample, Skeleton};

pub const EXPERIMENT_FORMAT: &str = "mvpose-experiment/1";

const REFERENCE_SPECS: [(&str, &str); 3] = [
    (
        "compare-objectives",
        include_str!("../../specs/compare_objectives.json"),
    ),
    ("view-count", include_str!("../../specs/view_count.json")),
    (
        "view-selection",
        include_str!("../../specs/view_selection.json"),
    ),
];

/// `count` motions with consecutive seeds, cycling through the activity presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSet {
    pub activities: Vec<String>,
    pub first_seed: u64,
    pub count: usize,
    pub frame_count: usize,
    pub frame_rate_hz: f64,
}

impl MotionSet {
    pub fn expand(&self) -> Result<Vec<MotionSpec>> {
        if self.activities.is_empty() || self.count == 0 {
            return Err(Error::Invalid(
                "motion set needs activities and a positive count".into(),
            ));
        }
        (0..self.count)
            .map(|i| {
                MotionSpec::preset(
                    &self.activities[i % self.activities.len()],
                    self.first_seed + i as u64,
                    self.frame_count,
                    self.frame_rate_hz,
                )
            })
            .collect()
    }

    fn seeds(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.count as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCell {
    pub objective: Objective,
    /// Defaults to the objective's default weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
}

impl ObjectiveCell {
    pub fn weights(&self) -> LossWeights {
        self.weights
            .unwrap_or_else(|| self.objective.default_weights())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub format_version: String,
    pub name: String,
    pub rig: RigSpec,
    pub train_motions: MotionSet,
    pub eval_motions: MotionSet,
    /// Cameras used only for evaluation.
    pub eval_views: Vec<usize>,
    pub objectives: Vec<ObjectiveCell>,
    /// Training camera subsets, in the pinned order used by the ablations.
    pub view_subsets: Vec<Vec<usize>>,
    /// Base training configuration; objective, weights and seed are overridden per cell.
    pub train: TrainConfig,
    pub replicate_seeds: Vec<u64>,
    /// Supervised pretraining run once per replicate seed; every cell then fine-tunes from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSpec {
    /// Defaults to the experiment rig.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<RigSpec>,
    pub motions: MotionSet,
    pub views: Vec<usize>,
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    pub epochs: usize,
    pub learning_rate: f64,
}

/// One trained configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub objective: Objective,
    pub weights: LossWeights,
    pub views: Vec<usize>,
}

fn views_label(views: &[usize]) -> String {
    views
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

impl ExperimentSpec {
    pub fn reference(name: &str) -> Result<Self> {
        let (_, text) = REFERENCE_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Invalid(format!("no reference spec named `{name}`")))?;
        Self::parse(text)
    }

    pub fn reference_names() -> Vec<&'static str> {
        REFERENCE_SPECS.iter().map(|(n, _)| *n).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = parse_versioned(text, EXPERIMENT_FORMAT)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        let n = self.rig.camera_count();
        if self.objectives.is_empty()
            || self.view_subsets.is_empty()
            || self.replicate_seeds.is_empty()
        {
            return Err(Error::Invalid(format!(
                "experiment `{}` has an empty grid",
                self.name
            )));
        }
        if self.eval_views.is_empty() {
            return Err(Error::Invalid(
                "at least one evaluation camera is required".into(),
            ));
        }
        if let Some(p) = &self.pretrain {
            let rig = p.rig.as_ref().unwrap_or(&self.rig);
            rig.validate()?;
            if p.views.is_empty() || p.views.iter().any(|v| *v >= rig.camera_count()) {
                return Err(Error::Invalid(
                    "pretraining cameras must be a nonempty subset of its rig".into(),
                ));
            }
        }
        for subset in self
            .view_subsets
            .iter()
            .chain(std::iter::once(&self.eval_views))
        {
            if subset.is_empty() {
                return Err(Error::Invalid("empty camera subset".into()));
            }
            if let Some(v) = subset.iter().find(|v| **v >= n) {
                return Err(Error::Invalid(format!(
                    "camera {v} not in the {n}-camera rig"
                )));
            }
            let mut s = subset.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != subset.len() {
                return Err(Error::Invalid(format!("camera listed twice in {subset:?}")));
            }
        }
        let train_seeds = self.train_motions.seeds();
        let eval_seeds = self.eval_motions.seeds();
        if train_seeds.start < eval_seeds.end && eval_seeds.start < train_seeds.end {
            return Err(Error::Invalid(
                "training and evaluation motion seeds overlap".into(),
            ));
        }
        if let Some(p) = &self.pretrain {
            let pre = p.motions.seeds();
            if pre.start < eval_seeds.end && eval_seeds.start < pre.end {
                return Err(Error::Invalid(
                    "pretraining and evaluation motion seeds overlap".into(),
                ));
            }
            self.pretrain_config(p, 0).validate()?;
        }
        for o in &self.objectives {
            o.objective.effective_weights(&o.weights()).validate()?;
        }
        let mut base = self.train.clone();
        base.objective = self.objectives[0].objective;
        base.weights = self.objectives[0].weights();
        base.validate()
    }

    /// Training and evaluation samples (the latter restricted to `eval_views`).
    pub fn datasets(&self) -> Result<(Vec<MultiviewSample>, Vec<MultiviewSample>)> {
        let skeleton = Skeleton::h36m();
        let train = generate_dataset(&self.rig, &self.train_motions.expand()?, &skeleton)?;
        let eval = generate_dataset(&self.rig, &self.eval_motions.expand()?, &skeleton)?
            .iter()
            .map(|s| s.subset(&self.eval_views))
            .collect::<Result<_>>()?;
        Ok((train, eval))
    }

    fn pretrain_config(&self, p: &PretrainSpec, seed: u64) -> TrainConfig {
        let mut c = self.train.clone();
        c.objective = p.objective;
        c.weights = p.weights.unwrap_or_else(|| p.objective.default_weights());
        c.epochs = p.epochs;
        c.learning_rate = p.learning_rate;
        c.seed = seed;
        c.model.init_seed = seed;
        c
    }

    /// The pretrained lifter for `seed`, or `None` when the spec trains from scratch.
    pub fn pretrained(&self, seed: u64) -> Result<Option<LifterParams>> {
        let Some(p) = &self.pretrain else {
            return Ok(None);
        };
        let samples = generate_dataset(
            p.rig.as_ref().unwrap_or(&self.rig),
            &p.motions.expand()?,
            &Skeleton::h36m(),
        )?
        .iter()
        .map(|s| s.subset(&p.views))
        .collect::<Result<Vec<_>>>()?;
        let (params, _) = train(&samples, &[], &self.pretrain_config(p, seed))?;
        Ok(Some(params))
    }

    pub fn config_for(&self, cell: &Cell, seed: u64) -> TrainConfig {
        let mut c = self.train.clone();
        c.objective = cell.objective;
        c.weights = cell.weights;
        c.seed = seed;
        c.model.init_seed = seed;
        c
    }
}

/// Trains and evaluates every (cell, seed); rows sorted by cell id then seed.
pub fn run_cells(spec: &ExperimentSpec, cells: &[Cell]) -> Result<ResultTable> {
    spec.validate()?;
    let (train_set, eval_set) = spec.datasets()?;
    let pretrained = spec
        .replicate_seeds
        .par_iter()
        .map(|s| Ok((*s, spec.pretrained(*s)?)))
        .collect::<Result<HashMap<_, _>>>()?;
    let jobs: Vec<(&Cell, u64)> = cells
        .iter()
        .flat_map(|c| spec.replicate_seeds.iter().map(move |s| (c, *s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|(cell, seed)| {
            let started = Instant::now();
            let subset = train_set
                .iter()
                .map(|s| s.subset(&cell.views))
                .collect::<Result<Vec<_>>>()?;
            let config = spec.config_for(cell, *seed);
            let (params, _) = match &pretrained[seed] {
                Some(init) => train_from(init.clone(), &subset, &[], &config)?,
                None => train(&subset, &[], &config)?,
            };
            let report = evaluate_lifter(&params, &eval_set)?;
            Ok(ResultRow {
                cell: cell.id.clone(),
                objective: cell.objective.name().to_string(),
                views: views_label(&cell.views),
                view_count: cell.views.len(),
                lambda_con: config.setup().weights.lambda_con,
                seed: *seed,
                mpjpe_mm: report.mpjpe_mm,
                pa_mpjpe_mm: report.pa_mpjpe_mm,
                per_activity: report.per_activity,
                wall_clock_s: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = ResultTable {
        experiment: spec.name.clone(),
        rows,
    };
    table.sort();
    table.validate()?;
    Ok(table)
}

pub fn objective_cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let single = spec.view_subsets.len() == 1;
    spec.view_subsets
        .iter()
        .flat_map(|views| {
            spec.objectives.iter().map(move |o| Cell {
                id: if single {
                    o.objective.name().to_string()
                } else {
                    format!("{}@{}", o.objective.name(), views_label(views))
                },
                objective: o.objective,
                weights: o.weights(),
                views: views.clone(),
            })
        })
        .collect()
}

/// One cell per subset, named by its view count; the first objective's weights
/// with `lambda_con` overridden when given.
pub fn view_count_cells(spec: &ExperimentSpec, lambda_con: Option<f64>) -> Result<Vec<Cell>> {
    let o = &spec.objectives[0];
    let mut weights = o.weights();
    if let Some(l) = lambda_con {
        weights.lambda_con = l;
    }
    let mut counts: Vec<usize> = spec.view_subsets.iter().map(|v| v.len()).collect();
    counts.sort_unstable();
    counts.dedup();
    if counts.len() != spec.view_subsets.len() {
        return Err(Error::Invalid(
            "view-count ablation needs one subset per view count".into(),
        ));
    }
    Ok(spec
        .view_subsets
        .iter()
        .map(|views| Cell {
            id: format!("k{:02}", views.len()),
            objective: o.objective,
            weights,
            views: views.clone(),
        })
        .collect())
}

/// Objective grid over the spec's camera subsets.
pub fn run_objective_comparison(spec: &ExperimentSpec) -> Result<ResultTable> {
    for cell in objective_cells(spec) {
        if cell.objective.uses_consistency() && cell.views.len() < 2 {
            return Err(Error::TooFewViews(cell.views.len()));
        }
    }
    run_cells(spec, &objective_cells(spec))
}

/// Error against number of training cameras under the spec's first objective.
pub fn run_view_count_ablation(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_cells(spec, &view_count_cells(spec, None)?)
}

/// The view-count ablation with the consistency term switched off.
pub fn run_data_vs_loss_attribution(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_cells(spec, &view_count_cells(spec, Some(0.0))?)
}

/// Pairs of a reference camera with each other camera; every subset must hold two cameras
/// and share its first entry.
pub fn run_view_selection_ablation(spec: &ExperimentSpec) -> Result<ResultTable> {
    let reference = spec.view_subsets[0][0];
    if spec
        .view_subsets
        .iter()
        .any(|v| v.len() != 2 || v[0] != reference)
    {
        return Err(Error::Invalid(format!(
            "view selection needs two-camera subsets starting with reference camera {reference}"
        )));
    }
    let o = &spec.objectives[0];
    let cells: Vec<Cell> = spec
        .view_subsets
        .iter()
        .map(|views| Cell {
            id: views_label(views),
            objective: o.objective,
            weights: o.weights(),
            views: views.clone(),
        })
        .collect();
    run_cells(spec, &cells)
}

/// Median error against view count, one series per metric.
pub fn view_count_plot(table: &ResultTable, title: &str) -> LinePlot {
    let summary = table.summarize();
    LinePlot {
        title: title.to_string(),
        x_label: "training views".into(),
        y_label: "median error (mm)".into(),
        series: vec![
            Series {
                name: "MPJPE".into(),
                points: summary
                    .iter()
                    .map(|s| (s.view_count as f64, s.median_mpjpe_mm))
                    .collect(),
            },
            Series {
                name: "PA-MPJPE".into(),
                points: summary
                    .iter()
                    .map(|s| (s.view_count as f64, s.median_pa_mpjpe_mm))
                    .collect(),
            },
        ],
        x_ticks: Vec::new(),
    }
}

/// Median error per cell on a categorical axis.
pub fn cell_plot(table: &ResultTable, title: &str) -> LinePlot {
    let summary = table.summarize();
    let x = |i: usize| (i + 1) as f64;
    LinePlot {
        title: title.to_string(),
        x_label: "cell".into(),
        y_label: "median error (mm)".into(),
        series: vec![
            Series {
                name: "MPJPE".into(),
                points: summary
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (x(i), s.median_mpjpe_mm))
                    .collect(),
            },
            Series {
                name: "PA-MPJPE".into(),
                points: summary
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (x(i), s.median_pa_mpjpe_mm))
                    .collect(),
            },
        ],
        x_ticks: summary
            .iter()
            .enumerate()
            .map(|(i, s)| (x(i), s.cell.clone()))
            .collect(),
    }
}

/// Writes `results.csv`, `results.json`, `summary.csv`, `timing.csv` and `results.svg` under `out`.
pub fn write_outputs(table: &ResultTable, plot: &LinePlot, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    table.write_csv(&out.join("results.csv"))?;
    table.write_json(&out.join("results.json"))?;
    table.write_summary_csv(&out.join("summary.csv"))?;
    table.write_timing_csv(&out.join("timing.csv"))?;
    fs::write(out.join("results.svg"), plot.to_svg())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_specs_are_valid() {
        for name in ExperimentSpec::reference_names() {
            ExperimentSpec::reference(name).unwrap();
        }
        assert!(ExperimentSpec::reference("nope").is_err());
    }

    #[test]
    fn comparison_grid_counts() {
        let spec = ExperimentSpec::reference("compare-objectives").unwrap();
        let cells = objective_cells(&spec);
        assert_eq!(
            cells.len() * spec.replicate_seeds.len(),
            spec.objectives.len() * 3
        );
    }

    #[test]
    fn view_count_cells_differ_only_in_weights() {
        let spec = ExperimentSpec::reference("view-count").unwrap();
        let with = view_count_cells(&spec, None).unwrap();
        let without = view_count_cells(&spec, Some(0.0)).unwrap();
        assert_eq!(with.len(), 7);
        for (a, b) in with.iter().zip(&without) {
            assert_eq!(
                (&a.id, a.objective, &a.views),
                (&b.id, b.objective, &b.views)
            );
            let mut w = a.weights;
            w.lambda_con = 0.0;
            assert_eq!(w, b.weights);
        }
    }

    #[test]
    fn overlapping_seeds_are_rejected() {
        let mut spec = ExperimentSpec::reference("compare-objectives").unwrap();
        spec.eval_motions.first_seed = spec.train_motions.first_seed + 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn out_of_rig_camera_is_rejected() {
        let mut spec = ExperimentSpec::reference("compare-objectives").unwrap();
        spec.view_subsets[0].push(17);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pretraining_overlapping_eval_is_rejected() {
        let mut spec = ExperimentSpec::reference("compare-objectives").unwrap();
        let eval_first = spec.eval_motions.first_seed;
        spec.pretrain.as_mut().unwrap().motions.first_seed = eval_first;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pretraining_camera_outside_its_rig_is_rejected() {
        let mut spec = ExperimentSpec::reference("compare-objectives").unwrap();
        spec.pretrain.as_mut().unwrap().views.push(40);
        assert!(spec.validate().is_err());
    }

    fn tiny(spec: &mut ExperimentSpec) {
        for m in [&mut spec.train_motions, &mut spec.eval_motions] {
            m.count = 1;
            m.frame_count = 12;
        }
        spec.train.epochs = 1;
        spec.train.model.hidden_sizes = vec![8];
        spec.replicate_seeds = vec![4];
        if let Some(p) = spec.pretrain.as_mut() {
            p.motions.count = 1;
            p.motions.frame_count = 12;
            p.epochs = 1;
        }
    }

    #[test]
    fn cells_fine_tune_from_the_pretrained_lifter() {
        let mut spec = ExperimentSpec::reference("compare-objectives").unwrap();
        spec.objectives.truncate(1);
        tiny(&mut spec);
        let pre = spec.pretrained(4).unwrap().unwrap();
        assert_eq!(pre.config.init_seed, 4);
        let with = run_cells(&spec, &objective_cells(&spec)).unwrap();
        assert_eq!(with.rows.len(), 1);
        spec.pretrain = None;
        assert!(spec.pretrained(4).unwrap().is_none());
        let without = run_cells(&spec, &objective_cells(&spec)).unwrap();
        assert_ne!(with.rows[0].mpjpe_mm, without.rows[0].mpjpe_mm);
    }
}
