use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mvpose_core::data::{write_dataset, Dataset};
use mvpose_core::harness::{
    cell_plot, check_gradients, objective_cells, procrustes_selftest, run_data_vs_loss_attribution,
    run_objective_comparison, run_view_count_ablation, run_view_selection_ablation,
    view_count_plot, write_outputs, ExperimentSpec,
};
use mvpose_core::model::LifterParams;
use mvpose_core::trainer::{evaluate_lifter, train, train_from};
use mvpose_core::types::Skeleton;

/// Multiview consistency training and ablations for a small 3D pose lifter.
#[derive(Parser)]
#[command(name = "mvpose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec: a JSON file or a built-in name (compare-objectives, view-count, view-selection).
    #[arg(long)]
    spec: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces the spec's replicate seeds with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and evaluation datasets of a spec.
    Synth(Common),
    /// Train the spec's first objective on its first camera subset.
    Train(Common),
    /// Evaluate a parameter checkpoint on the spec's evaluation cameras.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
    },
    /// Error against number of training views.
    AblateViews(Common),
    /// Reference camera paired with each other camera.
    AblateSelection(Common),
    /// Objective grid (L2D, L2Dcon, L3D, L3Dcon).
    CompareObjectives(Common),
    /// View-count ablation with the consistency term disabled.
    Attribution(Common),
    /// Finite-difference checks of every loss gradient and of the full training objective.
    CheckGradients {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Recovery of random similarity transforms, including mirrored targets.
    ProcrustesSelftest {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

fn load_spec(common: &Common, default: &str) -> Result<ExperimentSpec> {
    let name = common.spec.as_deref().unwrap_or(default);
    let mut spec = if Path::new(name).is_file() {
        ExperimentSpec::load(Path::new(name))?
    } else if ExperimentSpec::reference_names().contains(&name) {
        ExperimentSpec::reference(name)?
    } else {
        bail!("spec `{name}` is neither a file nor a built-in spec");
    };
    if let Some(seed) = common.seed {
        spec.replicate_seeds = vec![seed];
    }
    Ok(spec)
}

fn setup_threads(common: &Common) -> Result<()> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            setup_threads(&c)?;
            let spec = load_spec(&c, "compare-objectives")?;
            let (train_set, eval_set) = spec.datasets()?;
            fs::create_dir_all(&c.out)?;
            write_dataset(
                &Dataset::new(Skeleton::h36m(), train_set),
                &c.out.join("dataset.json"),
            )?;
            write_dataset(
                &Dataset::new(Skeleton::h36m(), eval_set),
                &c.out.join("eval_dataset.json"),
            )?;
            println!("wrote {}", c.out.display());
        }
        Command::Train(c) => {
            setup_threads(&c)?;
            let spec = load_spec(&c, "compare-objectives")?;
            let cell = objective_cells(&spec).remove(0);
            let config = spec.config_for(&cell, spec.replicate_seeds[0]);
            let (train_set, eval_set) = spec.datasets()?;
            let subset = train_set
                .iter()
                .map(|s| s.subset(&cell.views))
                .collect::<mvpose_core::Result<Vec<_>>>()?;
            let (params, log) = match spec.pretrained(spec.replicate_seeds[0])? {
                Some(init) => train_from(init, &subset, &eval_set, &config)?,
                None => train(&subset, &eval_set, &config)?,
            };
            fs::create_dir_all(&c.out)?;
            params.save(&c.out.join("params.json"))?;
            log.write_csv(&c.out.join("train_log.csv"))?;
            if let Some(last) = log.last() {
                println!(
                    "{} epoch {}: objective {:.6}, MPJPE {:.2} mm, PA-MPJPE {:.2} mm",
                    cell.id,
                    last.epoch,
                    last.objective,
                    last.val_mpjpe_mm.unwrap_or(f64::NAN),
                    last.val_pa_mpjpe_mm.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Eval { common, params } => {
            setup_threads(&common)?;
            let spec = load_spec(&common, "compare-objectives")?;
            let params = LifterParams::load(&params)?;
            let (_, eval_set) = spec.datasets()?;
            let report = evaluate_lifter(&params, &eval_set)?;
            fs::create_dir_all(&common.out)?;
            fs::write(
                common.out.join("metrics.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            println!(
                "MPJPE {:.2} mm, PA-MPJPE {:.2} mm",
                report.mpjpe_mm, report.pa_mpjpe_mm
            );
        }
        Command::AblateViews(c) => {
            setup_threads(&c)?;
            let spec = load_spec(&c, "view-count")?;
            let table = run_view_count_ablation(&spec)?;
            write_outputs(
                &table,
                &view_count_plot(&table, "Error against training views"),
                &c.out,
            )?;
            print_summary(&table);
        }
        Command::Attribution(c) => {
            setup_threads(&c)?;
            let spec = load_spec(&c, "view-count")?;
            let table = run_data_vs_loss_attribution(&spec)?;
            write_outputs(
                &table,
                &view_count_plot(&table, "Error against training views, no consistency"),
                &c.out,
            )?;
            print_summary(&table);
        }
        Command::AblateSelection(c) => {
            setup_threads(&c)?;
            let spec = load_spec(&c, "view-selection")?;
            let table = run_view_selection_ablation(&spec)?;
            write_outputs(&table, &cell_plot(&table, "Error per camera pair"), &c.out)?;
            print_summary(&table);
        }
        Command::CompareObjectives(c) => {
            setup_threads(&c)?;
            let spec = load_spec(&c, "compare-objectives")?;
            let table = run_objective_comparison(&spec)?;
            write_outputs(&table, &cell_plot(&table, "Error per objective"), &c.out)?;
            print_summary(&table);
        }
        Command::CheckGradients { common, cases } => {
            setup_threads(&common)?;
            let checks = check_gradients(common.seed.unwrap_or(0), cases)?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{:<20} {} cases  max rel err {:.3e}  (tol {:.0e})  {}",
                    c.name,
                    c.cases,
                    c.max_rel_err,
                    c.tolerance,
                    if c.passed() { "ok" } else { "FAIL" }
                );
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
        }
        Command::ProcrustesSelftest { common, cases } => {
            setup_threads(&common)?;
            let report = procrustes_selftest(common.seed.unwrap_or(0), cases)?;
            println!(
                "{} cases: max recovery error {:.3e}, proper rotations on mirrored targets {}/{}",
                report.cases, report.max_recovery_err, report.mirrored_proper, report.cases
            );
            if !report.passed(1e-7) {
                bail!("procrustes self-test failed");
            }
        }
    }
    Ok(())
}

fn print_summary(table: &mvpose_core::harness::ResultTable) {
    for s in table.summarize() {
        println!(
            "{:<12} views {:<14} median MPJPE {:>8.2} mm  PA-MPJPE {:>8.2} mm  ({} seeds)",
            s.cell, s.views, s.median_mpjpe_mm, s.median_pa_mpjpe_mm, s.seeds
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<mvpose_core::Error>()
                .map(|e| e.kind())
                .unwrap_or("error");
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!(
                "error kind={kind} message={}",
                serde_json::to_string(&message).unwrap_or_default()
            );
            ExitCode::FAILURE
        }
    }
}
