//! Subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tdm_core::buckets::BucketSpec;
use tdm_core::dataset::{read_dataset, write_dataset, Dataset};
use tdm_core::layers::{LayerKind, ModelConfig, SurrogateModel};
use tdm_core::metrics::error_vs_graph_size;
use tdm_core::pipeline::{bucket_distribution, generate_corpus, GenerationConfig};
use tdm_core::train::{
    classification_to_flow, evaluate_classification, evaluate_regression_model, grid_search,
    train as train_model, GridSpec, Task, TrainConfig,
};

use crate::manifest::ManifestBuilder;
use crate::plot::{render, Scatter};
use crate::{EvalArgs, GenDataArgs, GridArgs, PlotArgs, TrainArgs};

/// Apply a JSON config file over a serializable settings struct: the file's
/// keys replace the matching flag-derived values.
fn apply_overrides<T: Serialize + for<'de> Deserialize<'de>>(
    settings: T,
    config_path: Option<&Path>,
) -> Result<T> {
    let Some(path) = config_path else {
        return Ok(settings);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut base = serde_json::to_value(&settings)?;
    let (Some(base_map), Some(over_map)) = (base.as_object_mut(), overrides.as_object()) else {
        bail!("config file must contain a JSON object");
    };
    for (k, v) in over_map {
        if !base_map.contains_key(k) {
            bail!("unknown config key '{k}'");
        }
        base_map.insert(k.clone(), v.clone());
    }
    Ok(serde_json::from_value(base)?)
}

#[derive(Serialize, Deserialize)]
struct GenSettings {
    samples: usize,
    seed: u64,
    min_nodes: usize,
    max_nodes: usize,
    train_fraction: f64,
    val_fraction: f64,
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let settings = apply_overrides(
        GenSettings {
            samples: args.samples,
            seed: args.shared.seed,
            min_nodes: args.min_nodes,
            max_nodes: args.max_nodes,
            train_fraction: args.train_fraction,
            val_fraction: args.val_fraction,
        },
        args.shared.config.as_deref(),
    )?;
    let config = GenerationConfig {
        num_samples: settings.samples,
        seed: settings.seed,
        min_nodes: settings.min_nodes,
        max_nodes: settings.max_nodes,
        train_fraction: settings.train_fraction,
        val_fraction: settings.val_fraction,
        ..GenerationConfig::default()
    };
    config.validate()?;
    let mut manifest = ManifestBuilder::new("gen-data", serde_json::to_value(&settings)?, settings.seed);

    let (train, val, test) = generate_corpus(&config)?;
    fs::create_dir_all(&args.shared.out)?;
    for (ds, name) in [(&train, "train.jsonl"), (&val, "validation.jsonl"), (&test, "test.jsonl")] {
        let path = args.shared.out.join(name);
        write_dataset(ds, &path)?;
        manifest.output(&path);
    }

    let spec = BucketSpec::named("coarse3")?;
    let dist = bucket_distribution(&[&train, &val, &test], &spec)?;
    println!(
        "generated {} samples (train {} / val {} / test {})",
        settings.samples,
        train.samples.len(),
        val.samples.len(),
        test.samples.len()
    );
    print!("flow distribution:");
    for (k, frac) in dist.iter().enumerate() {
        print!(" bucket{}={:.1}%", k, frac * 100.0);
    }
    println!();

    manifest.write(&args.shared.out)?;
    Ok(())
}

#[derive(Serialize, Deserialize, Clone)]
struct ModelSettings {
    model: String,
    layers: usize,
    hidden: usize,
    alpha: f64,
    theta: f64,
    heads: usize,
    dropout: f64,
    graph_norm: bool,
    buckets: String,
    task: String,
    seed: u64,
}

impl ModelSettings {
    fn from_args(model: &crate::ModelArgs, seed: u64) -> ModelSettings {
        ModelSettings {
            model: model.model.clone(),
            layers: model.layers,
            hidden: model.hidden,
            alpha: model.alpha,
            theta: model.theta,
            heads: model.heads,
            dropout: model.dropout,
            graph_norm: model.graph_norm,
            buckets: model.buckets.clone(),
            task: model.task.clone(),
            seed,
        }
    }

    fn task(&self) -> Result<Task> {
        match self.task.as_str() {
            "cls" => Ok(Task::Classification(BucketSpec::named(&self.buckets)?)),
            "reg" => Ok(Task::Regression),
            other => bail!("unknown task '{other}' (expected cls or reg)"),
        }
    }

    fn model_config(&self, num_features: usize) -> Result<ModelConfig> {
        let kind = match self.model.as_str() {
            "gcn" => LayerKind::Gcn,
            "gcnii" => LayerKind::Gcnii { alpha: self.alpha, theta: self.theta },
            "gatv2" => LayerKind::Gatv2 { heads: self.heads },
            "gatv3" => LayerKind::Gatv3 { alpha: self.alpha, heads: self.heads },
            other => bail!("unknown model '{other}' (expected gcn|gcnii|gatv2|gatv3)"),
        };
        Ok(ModelConfig {
            kind,
            depth: self.layers,
            hidden: self.hidden,
            num_features,
            num_outputs: self.task()?.num_outputs(),
            dropout: self.dropout,
            use_graph_norm: self.graph_norm,
            seed: self.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TrainSettings {
    #[serde(flatten)]
    model: ModelSettings,
    epochs: usize,
    lr: f64,
    patience: usize,
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn dataset_features(dataset: &Dataset) -> Result<usize> {
    dataset
        .samples
        .first()
        .map(|s| s.num_features)
        .ok_or_else(|| anyhow::anyhow!("dataset is empty"))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let settings = apply_overrides(
        TrainSettings {
            model: ModelSettings::from_args(&args.model, args.shared.seed),
            epochs: args.epochs,
            lr: args.lr,
            patience: args.patience,
        },
        args.shared.config.as_deref(),
    )?;
    let mut manifest = ManifestBuilder::new("train", serde_json::to_value(&settings)?, settings.model.seed);
    manifest.input(&args.train);
    manifest.input(&args.val);

    let mut train_set = load_dataset(&args.train)?;
    if let Some(extra) = &args.extra_train {
        manifest.input(extra);
        train_set = train_set.union(load_dataset(extra)?)?;
    }
    let val_set = load_dataset(&args.val)?;
    let num_features = dataset_features(&train_set)?;

    let task = settings.model.task()?;
    let model = SurrogateModel::new(settings.model.model_config(num_features)?)?;
    let train_config = TrainConfig {
        task: task.clone(),
        epochs: settings.epochs,
        learning_rate: settings.lr,
        seed: settings.model.seed,
        patience: settings.patience,
    };
    let outcome = train_model(model, &train_set, &val_set, &train_config)?;

    fs::create_dir_all(&args.shared.out)?;
    let ckpt = args.shared.out.join("checkpoint.bin");
    outcome.model.save(&ckpt)?;
    manifest.output(&ckpt);

    let curves_path = args.shared.out.join("curves.csv");
    let mut curves = String::from("epoch,train_loss,val_loss,val_metric\n");
    for r in &outcome.curves {
        curves.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_metric
        ));
    }
    fs::write(&curves_path, curves)?;
    manifest.output(&curves_path);

    let report = match &task {
        Task::Classification(spec) => evaluate_classification(&outcome.model, &val_set, spec)?,
        Task::Regression => evaluate_regression_model(&outcome.model, &val_set)?,
    };
    let metrics_path = args.shared.out.join("metrics.json");
    fs::write(&metrics_path, serde_json::to_string_pretty(&report)?)?;
    manifest.output(&metrics_path);

    println!(
        "trained {} layers={} hidden={}: best epoch {} (val loss {:.4})",
        settings.model.model,
        settings.model.layers,
        settings.model.hidden,
        outcome.best_epoch,
        outcome.best_val_loss
    );
    if let Some(f1) = report.macro_f1 {
        println!("validation macro F1 = {f1:.4}");
    }
    if let Some(mae) = report.mae_ge10 {
        println!("validation MAE(>=10) = {mae:.2}");
    }
    manifest.write(&args.shared.out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalSettings {
    buckets: String,
    task: String,
    seed: u64,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let settings = apply_overrides(
        EvalSettings {
            buckets: args.buckets.clone(),
            task: args.task.clone(),
            seed: args.shared.seed,
        },
        args.shared.config.as_deref(),
    )?;
    let mut manifest = ManifestBuilder::new("eval", serde_json::to_value(&settings)?, settings.seed);
    manifest.input(&args.checkpoint);
    manifest.input(&args.data);

    let model = SurrogateModel::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let num_features = dataset_features(&dataset)?;
    if model.config.num_features != num_features {
        bail!(
            "feature schema mismatch: checkpoint expects {} features, dataset provides {}",
            model.config.num_features,
            num_features
        );
    }

    let (report, predictions) = match settings.task.as_str() {
        "cls" => {
            let spec = BucketSpec::named(&settings.buckets)?;
            if model.config.num_outputs != spec.num_buckets() {
                bail!(
                    "checkpoint has {} outputs but bucket scheme '{}' has {} buckets",
                    model.config.num_outputs,
                    settings.buckets,
                    spec.num_buckets()
                );
            }
            let report = evaluate_classification(&model, &dataset, &spec)?;
            let mut rows = Vec::new();
            for sample in &dataset.samples {
                let flows = classification_to_flow(&model, sample, &spec)?;
                for (i, &p) in flows.iter().enumerate() {
                    rows.push((sample.graph_id.clone(), i, sample.target_flow[i], p, sample.source_num_road_nodes));
                }
            }
            (report, rows)
        }
        "reg" => {
            if model.config.num_outputs != 1 {
                bail!("checkpoint has {} outputs; regression needs 1", model.config.num_outputs);
            }
            let report = evaluate_regression_model(&model, &dataset)?;
            let mut rows = Vec::new();
            for sample in &dataset.samples {
                let preds = model.predict(sample)?;
                for (i, &p) in preds.iter().enumerate() {
                    rows.push((sample.graph_id.clone(), i, sample.target_flow[i], p, sample.source_num_road_nodes));
                }
            }
            (report, rows)
        }
        other => bail!("unknown task '{other}' (expected cls or reg)"),
    };

    fs::create_dir_all(&args.shared.out)?;
    let metrics_path = args.shared.out.join("metrics.json");
    fs::write(&metrics_path, serde_json::to_string_pretty(&report)?)?;
    manifest.output(&metrics_path);

    let pred_path = args.shared.out.join("predictions.csv");
    let mut file = fs::File::create(&pred_path)?;
    writeln!(file, "graph_id,link,true_flow,predicted_flow,road_nodes")?;
    for (id, link, truth, pred, nodes) in &predictions {
        writeln!(file, "{id},{link},{truth},{pred},{nodes}")?;
    }
    manifest.output(&pred_path);

    if let Some(f1) = report.macro_f1 {
        println!("macro F1 = {f1:.4}  accuracy = {:.4}", report.accuracy.unwrap_or(f64::NAN));
    }
    if let (Some(mae), Some(r2)) = (report.mae_ge10, report.r2_ge10) {
        println!("MAE(>=10) = {mae:.2}  R2(>=10) = {r2:.3}");
    }
    manifest.write(&args.shared.out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GridSettings {
    #[serde(flatten)]
    model: ModelSettings,
    grid_layers: Vec<usize>,
    grid_hidden: Vec<usize>,
    grid_alpha: Vec<f64>,
    grid_theta: Vec<f64>,
    epochs: usize,
    lr: f64,
    patience: usize,
}

pub fn gridsearch(args: GridArgs) -> Result<()> {
    let settings = apply_overrides(
        GridSettings {
            model: ModelSettings::from_args(&args.model, args.shared.seed),
            grid_layers: args.grid_layers.clone(),
            grid_hidden: args.grid_hidden.clone(),
            grid_alpha: args.grid_alpha.clone(),
            grid_theta: args.grid_theta.clone(),
            epochs: args.epochs,
            lr: args.lr,
            patience: args.patience,
        },
        args.shared.config.as_deref(),
    )?;
    let mut manifest = ManifestBuilder::new("gridsearch", serde_json::to_value(&settings)?, settings.model.seed);
    manifest.input(&args.train);
    manifest.input(&args.val);

    let train_set = load_dataset(&args.train)?;
    let val_set = load_dataset(&args.val)?;
    let num_features = dataset_features(&train_set)?;
    let template = settings.model.model_config(num_features)?;
    let grid = GridSpec {
        layers: settings.grid_layers.clone(),
        hidden: settings.grid_hidden.clone(),
        alpha: settings.grid_alpha.clone(),
        theta: settings.grid_theta.clone(),
    };
    let train_config = TrainConfig {
        task: settings.model.task()?,
        epochs: settings.epochs,
        learning_rate: settings.lr,
        seed: settings.model.seed,
        patience: settings.patience,
    };
    let results = grid_search(&template, &grid, &train_set, &val_set, &train_config)?;

    #[derive(Serialize)]
    struct Row<'a> {
        rank: usize,
        config: &'a ModelConfig,
        val_metric: f64,
        error: &'a Option<String>,
    }
    let rows: Vec<Row> = results
        .iter()
        .enumerate()
        .map(|(i, r)| Row { rank: i + 1, config: &r.config, val_metric: r.val_metric, error: &r.error })
        .collect();
    fs::create_dir_all(&args.shared.out)?;
    let results_path = args.shared.out.join("grid_results.json");
    fs::write(&results_path, serde_json::to_string_pretty(&rows)?)?;
    manifest.output(&results_path);

    if let Some(best) = results.first() {
        println!(
            "best: depth={} hidden={} metric={:.4}",
            best.config.depth, best.config.hidden, best.val_metric
        );
    }
    manifest.write(&args.shared.out)?;
    Ok(())
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("plot", serde_json::json!({}), args.shared.seed);
    manifest.input(&args.predictions);

    let text = fs::read_to_string(&args.predictions)
        .with_context(|| format!("reading {}", args.predictions.display()))?;
    let mut points = Vec::new();
    let mut per_graph: std::collections::BTreeMap<String, (usize, f64, usize)> =
        std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("predictions line {} malformed: expected 5 fields", lineno + 1);
        }
        let truth: f64 = fields[2].parse().with_context(|| format!("line {}", lineno + 1))?;
        let pred: f64 = fields[3].parse().with_context(|| format!("line {}", lineno + 1))?;
        let nodes: usize = fields[4].parse().with_context(|| format!("line {}", lineno + 1))?;
        points.push((truth, pred));
        let entry = per_graph.entry(fields[0].to_string()).or_insert((nodes, 0.0, 0));
        if truth >= tdm_core::metrics::FLOW_METRIC_THRESHOLD {
            entry.1 += (pred - truth).abs();
            entry.2 += 1;
        }
    }
    if points.is_empty() {
        bail!("predictions file contains no data rows");
    }

    fs::create_dir_all(&args.shared.out)?;
    let scatter_path = args.shared.out.join("predicted_vs_true.svg");
    fs::write(
        &scatter_path,
        render(&Scatter {
            points: &points,
            x_label: "true flow [veh/h]",
            y_label: "predicted flow [veh/h]",
            title: "Predicted vs true link flow",
            identity_line: true,
            fit: None,
        }),
    )?;
    manifest.output(&scatter_path);

    let size_points: Vec<(usize, f64)> = per_graph
        .values()
        .filter(|(_, _, n)| *n > 0)
        .map(|&(nodes, err, n)| (nodes, err / n as f64))
        .collect();
    let (slope, corr) = error_vs_graph_size(&size_points);
    let size_csv_path = args.shared.out.join("mae_vs_size.csv");
    let mut csv = String::from("road_nodes,mae\n");
    let float_points: Vec<(f64, f64)> = size_points.iter().map(|&(n, e)| (n as f64, e)).collect();
    for (n, e) in &size_points {
        csv.push_str(&format!("{n},{e}\n"));
    }
    fs::write(&size_csv_path, csv)?;
    manifest.output(&size_csv_path);

    let intercept = if float_points.is_empty() {
        0.0
    } else {
        let mean_x = float_points.iter().map(|p| p.0).sum::<f64>() / float_points.len() as f64;
        let mean_y = float_points.iter().map(|p| p.1).sum::<f64>() / float_points.len() as f64;
        mean_y - slope * mean_x
    };
    let size_svg_path = args.shared.out.join("mae_vs_size.svg");
    fs::write(
        &size_svg_path,
        render(&Scatter {
            points: &float_points,
            x_label: "road nodes in source network",
            y_label: "MAE on links with flow >= 10 [veh/h]",
            title: "Error vs graph size",
            identity_line: false,
            fit: Some((slope, intercept, format!("slope = {slope:.3}, r = {corr:.2}"))),
        }),
    )?;
    manifest.output(&size_svg_path);

    println!(
        "wrote {} points; error-vs-size slope {slope:.3} (r = {corr:.2})",
        points.len()
    );
    manifest.write(&args.shared.out)?;
    Ok(())
}
