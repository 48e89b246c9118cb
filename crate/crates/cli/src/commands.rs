use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gender_audit::dataset::*;
use gender_audit::fairness::*;
use gender_audit::nets::*;
use gender_audit::plot::plot_curves;
use gender_audit::stacking::EnsembleKind;
use gender_audit::{round_half_up, Error};

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};
use crate::stages::*;
use crate::{pipeline, rundir, Cli, Command, PlotKind, StackKind, TransferKind};

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Validation(e.to_string()),
            other => other.into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if matches!(cli.command, Command::Pipeline) {
        cfg.validate_for_pipeline()?;
    } else {
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Input files are checked up front so a missing one is reported as bad
/// input rather than as a runtime failure.
fn read_manifest(path: &Path) -> CliResult<DatasetManifest> {
    if !path.is_file() {
        return Err(Failure::Validation(format!("manifest {} does not exist", path.display())));
    }
    let m = load_manifest(path)?;
    m.validate()?;
    Ok(m)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", round_half_up(v * 100.0, 2))
}

fn distribution_table(m: &DatasetManifest) -> CliResult<String> {
    let dist = group_distribution(m)?;
    let counts = m.group_counts();
    let mut out = format!("{:<20} {:>8} {:>10}\n", "group", "count", "share");
    for (k, p) in &dist {
        out.push_str(&format!("{:<20} {:>8} {:>10}\n", k.to_string(), counts[k], pct(*p)));
    }
    Ok(out)
}

fn parse_pair(s: &str) -> CliResult<(&str, &str)> {
    s.split_once('=')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| Failure::Validation(format!("expected KEY=VALUE, got {s:?}")))
}

fn classes_from(names: &[String], cfg: &RunConfig) -> CliResult<Vec<GenderLabel>> {
    let chosen: Vec<GenderLabel> = if names.is_empty() {
        cfg.data.baseline_classes.clone()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?
    };
    let ordered: Vec<GenderLabel> = GenderLabel::ALL.into_iter().filter(|c| chosen.contains(c)).collect();
    if ordered.len() < 2 {
        return Err(Failure::Validation("training needs at least two classes".into()));
    }
    Ok(ordered)
}

fn print_report(r: &EvaluationReport) {
    let classes: Vec<String> = r.per_class.iter().map(|g| format!("{} {}", g.group, pct(g.accuracy))).collect();
    println!(
        "{}: overall {} ({} wrong of {}); {}; selection rate {}; disparate impact {}",
        r.model_name,
        pct(r.overall_accuracy),
        r.wrong_count,
        r.total,
        classes.join(", "),
        pct(r.selection_rate),
        if r.disparate_impact { "yes" } else { "no" }
    );
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    let out = cli.global.out.clone();
    let new_run = |name: &str| -> CliResult<PathBuf> { Ok(rundir::create(&out, name, &cfg)?) };
    match &cli.command {
        Command::Ingest { manifest, split, record_level } => {
            let m = read_manifest(manifest)?;
            println!("{} records", m.len());
            print!("{}", distribution_table(&m)?);
            if *split {
                let fractions = cfg.split_fractions()?;
                let s = split_dataset(&m, fractions, cfg.seed, !record_level)?;
                for part in [Split::Train, Split::Val, Split::Test] {
                    println!("{}: {}", part.as_str(), s.count_where(|r| r.split == part));
                }
                let dir = new_run("ingest")?;
                save_manifest(&s, dir.join("manifest.csv"))?;
                println!("run directory: {}", dir.display());
            }
        }
        Command::Synth { per_group, side } => {
            let dir = new_run("synth")?;
            let synth = SynthConfig::balanced(&GenderLabel::ALL, *per_group, side.unwrap_or(cfg.input_side), cfg.seed);
            let m = generate_synthetic(&dir.join("data"), &synth)?;
            println!("{} images written; manifest {}", m.len(), dir.join("data").join("manifest.csv").display());
            println!("run directory: {}", dir.display());
        }
        Command::Rebalance { manifest, targets, oversample } => {
            let m = read_manifest(manifest)?;
            let mut cfg = cfg.clone();
            if !targets.is_empty() {
                cfg.rebalance.targets = targets
                    .iter()
                    .map(|t| {
                        let (k, v) = parse_pair(t)?;
                        let v: f64 = v.parse().map_err(|_| Failure::Validation(format!("bad proportion {v:?}")))?;
                        Ok((k.to_owned(), v))
                    })
                    .collect::<CliResult<BTreeMap<_, _>>>()?;
            }
            if let Some(o) = oversample {
                let (k, v) = parse_pair(o)?;
                let n: usize = v.parse().map_err(|_| Failure::Validation(format!("bad count {v:?}")))?;
                cfg.rebalance.oversample =
                    Some(crate::config::OversampleConfig { class: k.to_owned(), target_count: Some(n), proportion: None });
            }
            cfg.validate()?;
            let dir = rundir::create(&out, "rebalance", &cfg)?;
            // Only the training split is grown when splits exist.
            let has_train = m.records.iter().any(|r| r.split == Split::Train);
            let (target, rest): (Vec<ImageRecord>, Vec<ImageRecord>) =
                m.records.iter().cloned().partition(|r| !has_train || r.split == Split::Train);
            let (grown, notes) = rebalance(&DatasetManifest::new(m.name.clone(), target), &cfg, &dir)?;
            let mut records = rest;
            records.extend(grown.records.iter().cloned());
            let result = DatasetManifest::new(format!("{}-rebalanced", m.name), records);
            write_text(&dir.join(PLAN_FILE), &notes)?;
            save_manifest(&result, dir.join("manifest.csv"))?;
            print!("{notes}");
            print!("{}", distribution_table(&grown)?);
            println!("run directory: {}", dir.display());
        }
        Command::Train { manifest, classes } => {
            let m = read_manifest(manifest)?;
            let classes = classes_from(classes, &cfg)?;
            let train_set = restrict(&require_split(&m, Split::Train)?, &classes);
            let val_set = restrict(&require_split(&m, Split::Val)?, &classes);
            let dir = new_run("train")?;
            let net = Network::init(build_baseline(cfg.input_side, classes.len())?, cfg.seed)?;
            let (_, h) = train_and_save(TrainedModel::new(net, classes)?, &train_set, &val_set, &cfg.baseline, &dir.join("model"))?;
            print_history(&h);
            println!("run directory: {}", dir.display());
        }
        Command::Transfer { manifest, kind, base } => {
            let m = read_manifest(manifest)?;
            let train_set = require_split(&m, Split::Train)?;
            let val_set = require_split(&m, Split::Val)?;
            let n = GenderLabel::ALL.len();
            let load_base = || -> CliResult<TrainedModel> {
                let dir = base.as_ref().ok_or_else(|| Failure::Validation("--base is required for this kind".into()))?;
                Ok(load_model(dir)?.0)
            };
            let model = match kind {
                TransferKind::FeatureExtraction => make_feature_extractor(&load_base()?, n, cfg.seed)?,
                TransferKind::FineTune => make_fine_tuned(&load_base()?, n, cfg.transfer.orientation, cfg.seed)?,
                TransferKind::Backbone => {
                    make_backbone_extractor(&load_backbone(&cfg.transfer.backbone, cfg.input_side)?, n, cfg.seed)?
                }
            };
            let dir = new_run("transfer")?;
            let (_, h) = train_and_save(model, &train_set, &val_set, &cfg.transfer.training, &dir.join("model"))?;
            print_history(&h);
            println!("run directory: {}", dir.display());
        }
        Command::Stack { manifest, kind, models } => {
            let m = read_manifest(manifest)?;
            let mut members = Vec::new();
            let mut bases = Vec::new();
            for spec in models {
                let (id, path) = parse_pair(spec)?;
                let path = std::fs::canonicalize(path)
                    .map_err(|e| Failure::Validation(format!("model {id}: {path}: {e}")))?;
                bases.push((id.to_owned(), load_model(&path)?.0));
                members.push((id.to_owned(), path));
            }
            let (outputs, labels) = base_outputs(&bases, &meta_rows(&m, &cfg)?)?;
            let kind = match kind {
                StackKind::Logistic => EnsembleKind::Logistic,
                StackKind::Adaboost => EnsembleKind::Adaboost,
            };
            let ensemble = fit_ensemble(kind, &outputs, &labels, &cfg)?;
            let dir = new_run("stack")?;
            save_stacked(&ensemble, &members, &dir.join("ensemble"))?;
            println!(
                "chosen {:?}; training accuracy {} on {} rows",
                ensemble.cv_report.chosen,
                pct(ensemble.cv_report.training_accuracy),
                ensemble.cv_report.training_rows
            );
            println!("run directory: {}", dir.display());
        }
        Command::Evaluate { manifest, model, ensemble, name } => {
            let m = read_manifest(manifest)?;
            let test = require_split(&m, Split::Test)?;
            let classifier: Box<dyn Classifier> = match (model, ensemble) {
                (Some(dir), _) => Box::new(load_model(dir)?.0),
                (None, Some(dir)) => Box::new(load_stacked(dir)?),
                (None, None) => return Err(Failure::Validation("give --model or --ensemble".into())),
            };
            let dir = new_run("evaluate")?;
            let r = audit(classifier.as_ref(), &test, name, &cfg, &dir)?;
            print_report(&r);
            println!("run directory: {}", dir.display());
        }
        Command::Report { reports } => {
            let loaded = reports.iter().map(|p| load_report(p)).collect::<Result<Vec<_>, _>>()?;
            let dir = new_run("report")?;
            print!("{}", write_table(&loaded, &dir)?);
            println!("run directory: {}", dir.display());
        }
        Command::Plot { kind, input } => {
            let dir = new_run("plot")?;
            match kind {
                PlotKind::Curves => {
                    let h = TrainingHistory::load(input)?;
                    let plot = plot_curves(&h, &dir.join(CURVES_FILE))?;
                    println!("{} epochs plotted", plot.epochs);
                }
                PlotKind::Grid => {
                    let r = load_report(input)?;
                    match misclassified_grid(&r, cfg.fairness.grid_columns, &dir.join("grid.png"))? {
                        Some(g) => println!("{} tiles in a {}x{} grid", g.tiles.len(), g.rows, g.columns),
                        None => println!("{} has no misclassified images; nothing drawn", r.model_name),
                    }
                }
            }
            println!("run directory: {}", dir.display());
        }
        Command::Pipeline => {
            let dir = new_run("pipeline")?;
            let result = pipeline::run(&cfg, &dir)?;
            for r in &result.reports {
                print_report(r);
            }
            print!("{}", result.table);
            println!("run directory: {}", dir.display());
        }
    }
    Ok(())
}

fn print_history(h: &TrainingHistory) {
    let last = h.epochs().saturating_sub(1);
    println!(
        "{} epochs; final train accuracy {}, val accuracy {}",
        h.epochs(),
        pct(h.train_accuracy[last]),
        pct(h.val_accuracy[last])
    );
}
