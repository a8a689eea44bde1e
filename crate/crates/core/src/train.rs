//! Training loops, baselines, grid search, and model-level evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::buckets::BucketSpec;
use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::graph::LineGraphSample;
use crate::layers::{GraphStructure, ModelConfig, SurrogateModel};
use crate::metrics::{
    classification_metrics, error_vs_graph_size, regression_metrics, MetricsReport,
    FLOW_METRIC_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Classification(BucketSpec),
    Regression,
}

impl Task {
    pub fn num_outputs(&self) -> usize {
        match self {
            Task::Classification(spec) => spec.num_buckets(),
            Task::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Early-stop patience on validation loss, in epochs.
    pub patience: usize,
}

impl TrainConfig {
    pub fn new(task: Task) -> TrainConfig {
        TrainConfig {
            task,
            epochs: 300,
            learning_rate: 1e-3,
            seed: 0,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Macro F1 for classification, MAE for regression.
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SurrogateModel,
    pub curves: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

struct Prepared {
    structure: GraphStructure,
    labels: Vec<usize>,
    targets: Vec<f64>,
}

fn prepare(samples: &[LineGraphSample], task: &Task) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let labels = match task {
                Task::Classification(spec) => s
                    .target_flow
                    .iter()
                    .map(|&t| spec.encode(t))
                    .collect::<Result<Vec<usize>>>()?,
                Task::Regression => Vec::new(),
            };
            Ok(Prepared {
                structure: GraphStructure::from_sample(s),
                labels,
                targets: s.target_flow.clone(),
            })
        })
        .collect()
}

fn sample_loss(
    model: &SurrogateModel,
    sample: &LineGraphSample,
    prep: &Prepared,
    task: &Task,
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &sample.features, &prep.structure, training, rng)?;
    let loss = match task {
        Task::Classification(_) => tape.cross_entropy(pass.output, &prep.labels)?,
        Task::Regression => {
            let target = tape.constant(prep.targets.clone(), sample.num_nodes, 1)?;
            tape.mse(pass.output, target)?
        }
    };
    let loss_value = tape.values(loss)[0];
    if !loss_value.is_finite() {
        return Err(CoreError::Diverged(format!(
            "non-finite loss on graph {}",
            sample.graph_id
        )));
    }
    if !training {
        return Ok((loss_value, None));
    }
    tape.backward(loss)?;
    let grads = pass
        .param_ids
        .iter()
        .map(|&id| tape.grad(id).to_vec())
        .collect();
    Ok((loss_value, Some(grads)))
}

/// Full-graph gradient steps, one graph per step, shuffled each epoch.
/// Returns the best-validation-loss checkpoint and per-epoch curves.
pub fn train(
    mut model: SurrogateModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.samples.is_empty() {
        return Err(CoreError::Domain("empty training set".into()));
    }
    let train_prep = prepare(&train_set.samples, &config.task)?;
    let val_prep = prepare(&val_set.samples, &config.task)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(&model.param_sizes());
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };

    let mut curves = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.values();
    let mut since_best = 0usize;

    let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
    let mut params = model.values();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &i in &order {
            model.set_values(&params);
            let (loss, grads) = sample_loss(
                &model,
                &train_set.samples[i],
                &train_prep[i],
                &config.task,
                true,
                &mut rng,
            )?;
            train_loss += loss;
            adam_step(&mut params, &grads.unwrap(), &mut state, &adam);
        }
        train_loss /= order.len() as f64;
        model.set_values(&params);

        let (val_loss, val_metric) = validate(&model, val_set, &val_prep, &config.task)?;
        curves.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.set_values(&best_params);
    Ok(TrainOutcome {
        model,
        curves,
        best_epoch,
        best_val_loss: best_val,
    })
}

fn validate(
    model: &SurrogateModel,
    val_set: &Dataset,
    val_prep: &[Prepared],
    task: &Task,
) -> Result<(f64, f64)> {
    if val_set.samples.is_empty() {
        return Ok((f64::INFINITY, 0.0));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let mut loss = 0.0;
    for (s, p) in val_set.samples.iter().zip(val_prep) {
        loss += sample_loss(model, s, p, task, false, &mut rng)?.0;
    }
    loss /= val_set.samples.len() as f64;
    let metric = match task {
        Task::Classification(spec) => {
            let report = evaluate_classification(model, val_set, spec)?;
            report.macro_f1.unwrap_or(0.0)
        }
        Task::Regression => {
            let (preds, targets) = regression_predictions(model, val_set)?;
            match regression_metrics(&preds, &targets) {
                Ok((mae, _)) => mae,
                // fall back to plain MAE when nothing passes the filter
                Err(_) => {
                    preds
                        .iter()
                        .zip(&targets)
                        .map(|(p, t)| (p - t).abs())
                        .sum::<f64>()
                        / preds.len().max(1) as f64
                }
            }
        }
    };
    Ok((loss, metric))
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-node bucket probabilities decoded into veh/h via the expectation rule.
pub fn classification_to_flow(
    model: &SurrogateModel,
    sample: &LineGraphSample,
    spec: &BucketSpec,
) -> Result<Vec<f64>> {
    let c = spec.num_buckets();
    let logits = model.predict(sample)?;
    (0..sample.num_nodes)
        .map(|i| spec.decode_expectation(&softmax_row(&logits[i * c..(i + 1) * c])))
        .collect()
}

/// Accuracy and F1 over bucket indices, plus decoded-flow regression metrics
/// and per-graph errors for the size analysis.
pub fn evaluate_classification(
    model: &SurrogateModel,
    dataset: &Dataset,
    spec: &BucketSpec,
) -> Result<MetricsReport> {
    if dataset.samples.is_empty() {
        return Err(CoreError::Domain("cannot evaluate an empty dataset".into()));
    }
    let c = spec.num_buckets();
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut flows_pred = Vec::new();
    let mut flows_true = Vec::new();
    let mut per_graph = Vec::new();
    for sample in &dataset.samples {
        let logits = model.predict(sample)?;
        let mut graph_err = 0.0;
        let mut graph_n = 0usize;
        for i in 0..sample.num_nodes {
            let row = &logits[i * c..(i + 1) * c];
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            predicted.push(arg);
            truth.push(spec.encode(sample.target_flow[i])?);
            let flow = spec.decode_expectation(&softmax_row(row))?;
            flows_pred.push(flow);
            flows_true.push(sample.target_flow[i]);
            if sample.target_flow[i] >= FLOW_METRIC_THRESHOLD {
                graph_err += (flow - sample.target_flow[i]).abs();
                graph_n += 1;
            }
        }
        if graph_n > 0 {
            per_graph.push((sample.source_num_road_nodes, graph_err / graph_n as f64));
        }
    }
    let (accuracy, per_class, macro_f1) = classification_metrics(&predicted, &truth, c)?;
    let (mae, r2) = match regression_metrics(&flows_pred, &flows_true) {
        Ok(pair) => (Some(pair.0), Some(pair.1)),
        Err(_) => (None, None),
    };
    Ok(MetricsReport {
        accuracy: Some(accuracy),
        per_class_f1: Some(per_class),
        macro_f1: Some(macro_f1),
        mae_ge10: mae,
        r2_ge10: r2,
        per_graph_error: per_graph,
    })
}

fn regression_predictions(model: &SurrogateModel, dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for sample in &dataset.samples {
        preds.extend(model.predict(sample)?);
        targets.extend_from_slice(&sample.target_flow);
    }
    Ok((preds, targets))
}

pub fn evaluate_regression_model(model: &SurrogateModel, dataset: &Dataset) -> Result<MetricsReport> {
    if dataset.samples.is_empty() {
        return Err(CoreError::Domain("cannot evaluate an empty dataset".into()));
    }
    let mut per_graph = Vec::new();
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for sample in &dataset.samples {
        let p = model.predict(sample)?;
        let mut err = 0.0;
        let mut n = 0usize;
        for (i, &t) in sample.target_flow.iter().enumerate() {
            if t >= FLOW_METRIC_THRESHOLD {
                err += (p[i] - t).abs();
                n += 1;
            }
        }
        if n > 0 {
            per_graph.push((sample.source_num_road_nodes, err / n as f64));
        }
        preds.extend(p);
        targets.extend_from_slice(&sample.target_flow);
    }
    let (mae, r2) = regression_metrics(&preds, &targets)?;
    Ok(MetricsReport {
        accuracy: None,
        per_class_f1: None,
        macro_f1: None,
        mae_ge10: Some(mae),
        r2_ge10: Some(r2),
        per_graph_error: per_graph,
    })
}

/// Predicts the most frequent training bucket everywhere.
pub fn majority_classifier(train_set: &Dataset, spec: &BucketSpec) -> Result<usize> {
    let mut counts = vec![0usize; spec.num_buckets()];
    for s in &train_set.samples {
        for &t in &s.target_flow {
            counts[spec.encode(t)?] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .max_by_key(|&(_, c)| *c)
        .map(|(k, _)| k)
        .ok_or_else(|| CoreError::Domain("empty training set".into()))
}

/// Evaluate the constant majority prediction on a dataset.
pub fn evaluate_majority(
    majority_bucket: usize,
    dataset: &Dataset,
    spec: &BucketSpec,
) -> Result<MetricsReport> {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for s in &dataset.samples {
        for &t in &s.target_flow {
            predicted.push(majority_bucket);
            truth.push(spec.encode(t)?);
        }
    }
    let (accuracy, per_class, macro_f1) =
        classification_metrics(&predicted, &truth, spec.num_buckets())?;
    Ok(MetricsReport {
        accuracy: Some(accuracy),
        per_class_f1: Some(per_class),
        macro_f1: Some(macro_f1),
        mae_ge10: None,
        r2_ge10: None,
        per_graph_error: Vec::new(),
    })
}

/// Predicts the training-mean flow everywhere.
pub fn mean_regressor(train_set: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in &train_set.samples {
        sum += s.target_flow.iter().sum::<f64>();
        n += s.target_flow.len();
    }
    if n == 0 {
        return Err(CoreError::Domain("empty training set".into()));
    }
    Ok(sum / n as f64)
}

pub fn evaluate_mean_regressor(mean: f64, dataset: &Dataset) -> Result<MetricsReport> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for s in &dataset.samples {
        preds.extend(std::iter::repeat(mean).take(s.num_nodes));
        targets.extend_from_slice(&s.target_flow);
    }
    let (mae, r2) = regression_metrics(&preds, &targets)?;
    Ok(MetricsReport {
        accuracy: None,
        per_class_f1: None,
        macro_f1: None,
        mae_ge10: Some(mae),
        r2_ge10: Some(r2),
        per_graph_error: Vec::new(),
    })
}

/// The MLP baseline is the surrogate with a depth-0 graph stack: features
/// only, no message passing.
pub fn mlp_config(template: &ModelConfig) -> ModelConfig {
    ModelConfig {
        depth: 0,
        ..template.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
}

impl GridSpec {
    /// Reference grid for the deep-convolution comparison: layers
    /// (5, 10, 50, 70), width (64, 256, 512), alpha (0.1, 0.4),
    /// theta (0.5, 1.5).
    pub fn gcnii_reference() -> GridSpec {
        GridSpec {
            layers: vec![5, 10, 50, 70],
            hidden: vec![64, 256, 512],
            alpha: vec![0.1, 0.4],
            theta: vec![0.5, 1.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.hidden.is_empty() {
            return Err(CoreError::Domain("grid axes must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub config: ModelConfig,
    /// Validation macro F1 (classification) or MAE (regression).
    pub val_metric: f64,
    pub error: Option<String>,
}

/// Train every grid point and rank by validation metric (descending F1 for
/// classification, ascending MAE for regression). Individual failures are
/// recorded, not fatal. Runs execute in parallel.
pub fn grid_search(
    template: &ModelConfig,
    grid: &GridSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<GridResult>> {
    grid.validate()?;
    let mut configs = Vec::new();
    let (alphas, thetas) = match template.kind {
        crate::layers::LayerKind::Gcnii { .. } => (grid.alpha.clone(), grid.theta.clone()),
        _ => (vec![f64::NAN], vec![f64::NAN]),
    };
    for &depth in &grid.layers {
        for &hidden in &grid.hidden {
            for &alpha in &alphas {
                for &theta in &thetas {
                    let mut cfg = template.clone();
                    cfg.depth = depth;
                    cfg.hidden = hidden;
                    if let crate::layers::LayerKind::Gcnii { .. } = cfg.kind {
                        cfg.kind = crate::layers::LayerKind::Gcnii { alpha, theta };
                    }
                    configs.push(cfg);
                }
            }
        }
    }

    let classification = matches!(config.task, Task::Classification(_));
    let mut results: Vec<GridResult> = configs
        .into_par_iter()
        .map(|cfg| {
            let run = || -> Result<f64> {
                let model = SurrogateModel::new(cfg.clone())?;
                let outcome = train(model, train_set, val_set, config)?;
                Ok(outcome
                    .curves
                    .get(outcome.best_epoch)
                    .map(|r| r.val_metric)
                    .unwrap_or(0.0))
            };
            match run() {
                Ok(metric) => GridResult {
                    config: cfg,
                    val_metric: metric,
                    error: None,
                },
                Err(e) => GridResult {
                    config: cfg,
                    val_metric: if classification { f64::NEG_INFINITY } else { f64::INFINITY },
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    if classification {
        results.sort_by(|a, b| b.val_metric.partial_cmp(&a.val_metric).unwrap());
    } else {
        results.sort_by(|a, b| a.val_metric.partial_cmp(&b.val_metric).unwrap());
    }
    Ok(results)
}

/// Fig.-4-style analysis: per-graph error points plus fitted slope and
/// correlation of error against graph size.
pub fn size_analysis(report: &MetricsReport) -> (Vec<(usize, f64)>, f64, f64) {
    let (slope, corr) = error_vs_graph_size(&report.per_graph_error);
    (report.per_graph_error.clone(), slope, corr)
}
