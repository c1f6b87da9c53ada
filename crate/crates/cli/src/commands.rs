//! Implementations of the five subcommands. Each returns a classified
//! error so `main` can map it onto the documented exit codes.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use weakheight_core::dataset::{load_dataset, save_dataset, Dataset};
use weakheight_core::ensemble::{blend_one, load_checkpoint, EnsembleModel};
use weakheight_core::evalsuite::{
    render_height_png, render_maps, write_metrics_csv, write_report_json, MetricsReport,
};
use weakheight_core::load_patch;
use weakheight_core::manifest::Split;
use weakheight_core::patch::QualityClass;
use weakheight_core::synthcity::synthesize;
use weakheight_core::trainer::{evaluate_blended, fit};

use crate::cli_error::CliError;
use crate::config::{self, RunConfig};
use crate::{EvalArgs, PredictArgs, ReportArgs, SynthArgs, TrainArgs};

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut rc = config::resolve(&args.cfg)?;
    let spec = rc.resolved_synth();
    let requested: usize = spec
        .cities
        .iter()
        .map(|c| c.train_patches + c.val_patches + c.test_patches)
        .sum();
    if requested == 0 {
        return Err(CliError::Config(
            "empty dataset: the synthesis plan requests zero patches".into(),
        ));
    }
    let out = args
        .out
        .clone()
        .or_else(|| rc.paths.out_dir.clone())
        .or_else(|| config::cache_root().map(|c| c.join(format!("synth-seed-{}", spec.seed))))
        .ok_or_else(|| {
            CliError::Config(
                "no output directory: pass --out, set paths.out_dir, or set WEAKHEIGHT_CACHE"
                    .into(),
            )
        })?;

    let dataset = synthesize(&spec)?;
    let manifest = save_dataset(&dataset, &out)?;
    rc.synth = Some(spec.clone());
    rc.paths.out_dir = Some(out.clone());
    config::write_run_config(&rc, &out.join("run-config.json"))?;

    println!(
        "wrote {} train / {} val / {} test patches ({}x{}) to {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        spec.patch_height,
        spec.patch_width,
        out.display()
    );
    let count = |q: QualityClass| dataset.train.iter().filter(|p| p.quality == q).count();
    println!(
        "train label quality: high {}, mid {}, low {}",
        count(QualityClass::High),
        count(QualityClass::Mid),
        count(QualityClass::Low)
    );
    let cities: Vec<String> = spec
        .cities
        .iter()
        .map(|c| format!("{} ({:?})", c.style.name, c.role))
        .collect();
    println!("cities: {}", cities.join(", "));
    println!(
        "manifest: {} ({} entries)",
        out.join("manifest.json").display(),
        manifest.entries.len()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let rc = config::resolve(&args.cfg)?;
    let data_dir = resolve_data_dir(args.data.clone(), &rc)?;
    let dataset = load_dataset(&data_dir)?;
    println!(
        "loaded {} train / {} val / {} test patches from {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        data_dir.display()
    );

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let checkpoint = args.out.join("model.wkhc");
    let outcome = fit(&dataset, &rc.model, &rc.train, Some(&checkpoint))?;
    let log_path = args.out.join("train-log.jsonl");
    outcome.log.write_jsonl(&log_path)?;
    config::write_run_config(&rc, &args.out.join("run-config.json"))?;

    println!(
        "best epoch {} with validation RMSE {:.4} m",
        outcome.best_epoch, outcome.best_val_rmse
    );
    println!("checkpoint: {}", checkpoint.display());
    println!("log: {}", log_path.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let report = scored_report(&model, &dataset, args.split.into(), args.workers)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let csv_path = args.out.join("metrics.csv");
    let json_path = args.out.join("report.json");
    write_metrics_csv(&report, &csv_path)?;
    write_report_json(&report, &json_path)?;

    print_report(&report);
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    if let Some(branch) = args.branch {
        if branch >= model.n_branches() {
            return Err(CliError::Config(format!(
                "--branch {branch} out of range: the checkpoint has {} branches",
                model.n_branches()
            )));
        }
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;

    for path in &args.patches {
        let patch = load_patch(path)?;
        let fwd = model.forward_one(&patch.image)?;
        let map = match args.branch {
            Some(branch) => fwd.branch_heights[branch].clone(),
            None => blend_one(&fwd),
        };
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "patch".to_string());
        let csv_path = args.out.join(format!("{stem}-height.csv"));
        write_height_csv(&map, &csv_path)?;
        let png_path = args.out.join(format!("{stem}-pred.png"));
        render_height_png(&map, &png_path)?;
        println!(
            "{} -> {} + {}",
            path.display(),
            csv_path.display(),
            png_path.display()
        );
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let split = args.split.into();
    let report = scored_report(&model, &dataset, split, args.workers)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    write_metrics_csv(&report, &args.out.join("metrics.csv"))?;
    write_report_json(&report, &args.out.join("report.json"))?;

    let maps_dir = args.out.join("maps");
    let mut rendered = 0usize;
    for (name, patches) in dataset.sets_of(split) {
        for (i, patch) in patches.iter().take(args.per_set).enumerate() {
            let fwd = model.forward_one(&patch.image)?;
            let pred = blend_one(&fwd);
            render_maps(
                &pred,
                &patch.height,
                &patch.instances,
                &maps_dir.join(format!("{name}-{i:02}")),
            )?;
            rendered += 1;
        }
    }

    print_report(&report);
    println!(
        "wrote metrics.csv, report.json, and {rendered} map sets under {}",
        args.out.display()
    );
    Ok(())
}

/// Scores the checkpoint on one split, grouping sets by the dataset's own
/// in-domain tags (the cities contributing high-quality training labels).
fn scored_report(
    model: &EnsembleModel,
    dataset: &Dataset,
    split: Split,
    workers: usize,
) -> Result<MetricsReport, CliError> {
    let sets = dataset.sets_of(split);
    if sets.is_empty() {
        return Err(CliError::Data(format!("no patches in the {split} split")));
    }
    let in_domain = dataset.in_domain_tags();
    let (report, _) = evaluate_blended(model, &sets, &in_domain, workers)?;
    Ok(report)
}

fn print_report(report: &MetricsReport) {
    for (name, rmse) in &report.per_set_rmse {
        let group = report.per_set_group[name].label();
        let n = report.n_buildings[name];
        println!("{name:<12} {group:<4} {n:>5} buildings  RMSE {rmse:.4} m");
    }
    if let Some(v) = report.in_domain_avg {
        println!("in-domain average:  {v:.4} m");
    }
    if let Some(v) = report.out_domain_avg {
        println!("out-domain average: {v:.4} m");
    }
    println!("combined average:   {:.4} m", report.combined_avg);
}

fn resolve_data_dir(flag: Option<PathBuf>, rc: &RunConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| config::default_data_dir(rc))
        .ok_or_else(|| {
            CliError::Config(
                "no dataset directory: pass --data, set paths.data_dir, or set WEAKHEIGHT_CACHE"
                    .into(),
            )
        })
}

fn write_height_csv(map: &Array2<f32>, path: &Path) -> Result<(), CliError> {
    let mut text = String::new();
    for row in map.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
