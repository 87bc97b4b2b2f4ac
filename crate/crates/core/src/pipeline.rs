//! End-to-end glue shared by the command-line driver, the benchmark and the
//! acceptance tests: build a model for a dataset, train it on the initial
//! span, then run the rolling fine-tune/evaluate protocol over the rest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_synthetic, split_temporal, Dataset, GeneratorConfig, PriceCatalog, Sample,
};
use crate::error::{Error, Result};
use crate::evaluation::{rolling_report, EvalConfig, PredictionRecord, RollingReport};
use crate::labeling::{label_samples, LabelConfig};
use crate::model::{LtvModel, ModelKind, ModelSpec};
use crate::nn::gradcheck::{GradCheckReport, DEFAULT_EPSILON};
use crate::nn::ModelParams;
use crate::seed;
use crate::train::{
    finetune_rolling, fit, DayPredictions, FinetuneConfig, RollingOutcome, TrainConfig, TrainLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    /// One width per categorical column (game, channel).
    pub embedding_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dims: vec![128, 64],
            embedding_widths: vec![8, 4],
        }
    }
}

/// Days `0..train_days` form the initial training span; every later day is
/// fine-tuned on and then used to score the day after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub train_days: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { train_days: 50 }
    }
}

/// Number of day buckets spanned by the dataset.
pub fn n_days(dataset: &Dataset) -> u32 {
    dataset.samples.iter().map(|s| s.day + 1).max().unwrap_or(0)
}

pub fn build_model(kind: ModelKind, dataset: &Dataset, config: &ModelConfig) -> Result<LtvModel> {
    LtvModel::new(ModelSpec::for_dataset(
        kind,
        dataset,
        config.hidden_dims.clone(),
        &config.embedding_widths,
    )?)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: LtvModel,
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Initializes from `train.seed` (output biases at the label prior) and
/// fits on days before `train_days`.
pub fn train_model(
    kind: ModelKind,
    dataset: &Dataset,
    model: &ModelConfig,
    train: &TrainConfig,
    protocol: &ProtocolConfig,
) -> Result<TrainedModel> {
    let split = split_temporal(&dataset.samples, protocol.train_days, n_days(dataset))?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument(
            "initial training span is empty".into(),
        ));
    }
    let model = build_model(kind, dataset, model)?;
    let refs: Vec<&Sample> = split.train.iter().collect();
    let init = model.init_params_with_prior(train.seed, &refs)?;
    log::info!(
        "training {kind} on {} samples ({} parameters)",
        split.train.len(),
        init.len()
    );
    let (params, log) = fit(&model, &init, &split.train, train)?;
    log::info!(
        "{kind}: loss {:.6} -> {:.6}",
        log.initial_loss,
        log.final_loss
    );
    Ok(TrainedModel { model, params, log })
}

pub fn records_of(day: &DayPredictions) -> Vec<PredictionRecord> {
    day.rows
        .iter()
        .map(|r| PredictionRecord {
            sample_id: r.sample_id,
            predicted: r.predicted,
            actual: r.actual,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub outcome: RollingOutcome,
    pub report: RollingReport,
}

pub fn evaluate_model(
    model: &LtvModel,
    params: &ModelParams,
    dataset: &Dataset,
    train: &TrainConfig,
    finetune: &FinetuneConfig,
    protocol: &ProtocolConfig,
    eval: &EvalConfig,
) -> Result<Evaluation> {
    let split = split_temporal(&dataset.samples, protocol.train_days, n_days(dataset))?;
    let outcome = finetune_rolling(model, params, &split.rolling, train, finetune)?;
    let per_day: Vec<(u32, Vec<PredictionRecord>)> = outcome
        .days
        .iter()
        .map(|d| (d.day, records_of(d)))
        .collect();
    let report = rolling_report(&per_day, eval)?;
    Ok(Evaluation { outcome, report })
}

/// Small random problem for gradient checking: a few dense features, two
/// categorical columns, one or two narrow hidden layers, a 2-3 price
/// catalog, and a batch of 8 samples mixing payers and non-payers.
#[derive(Debug, Clone)]
pub struct TinyProblem {
    pub dataset: Dataset,
    pub model: ModelConfig,
    pub batch: Vec<usize>,
}

pub fn tiny_problem(seed: u64) -> Result<TinyProblem> {
    let mut rng = seed::stream_rng(seed::mix(seed, seed::TAG_GRADCHECK), 1);
    let pool = [1.0, 2.0, 3.0, 5.0, 6.0, 8.0];
    let m = rng.random_range(2..=3);
    let mut prices: Vec<f64> = rand::seq::index::sample(&mut rng, pool.len(), m)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    prices.sort_by(f64::total_cmp);
    let caps = (0..m).map(|_| rng.random_range(1..=3)).collect();
    let mut dataset = generate_synthetic(&GeneratorConfig {
        n_samples: 200,
        n_days: 2,
        payer_rate: 0.3,
        whale_rate: 0.0,
        price_catalog: PriceCatalog::new(prices, caps)?,
        feature_dim: rng.random_range(2..=5),
        noise_scale: 0.5,
        n_games: rng.random_range(2..=4),
        n_channels: rng.random_range(2..=3),
        seed: rng.random(),
    })?;
    label_samples(
        &mut dataset.samples,
        &LabelConfig::new(24.0, dataset.catalog.clone())?,
    );
    let layers = rng.random_range(1..=2);
    let model = ModelConfig {
        hidden_dims: (0..layers).map(|_| rng.random_range(3..=6)).collect(),
        embedding_widths: vec![rng.random_range(1..=3), rng.random_range(1..=3)],
    };
    let is_payer = |s: &Sample| s.ltv_label().is_some_and(|v| v > 0.0);
    let mut batch: Vec<usize> = (0..dataset.samples.len())
        .filter(|&i| is_payer(&dataset.samples[i]))
        .take(4)
        .collect();
    let fill = 8 - batch.len();
    batch.extend(
        (0..dataset.samples.len())
            .filter(|&i| !is_payer(&dataset.samples[i]))
            .take(fill),
    );
    Ok(TinyProblem {
        dataset,
        model,
        batch,
    })
}

/// Gradient check of `kind` on `count` tiny problems derived from `seed`,
/// every parameter coordinate checked at `epsilon = 1e-5`.
pub fn gradient_check_suite(
    kind: ModelKind,
    count: usize,
    seed: u64,
) -> Result<Vec<GradCheckReport>> {
    (0..count as u64)
        .map(|i| {
            let problem_seed = seed::mix(seed, i);
            let p = tiny_problem(problem_seed)?;
            let model = build_model(kind, &p.dataset, &p.model)?;
            let params = model.init_params(problem_seed);
            let batch: Vec<&Sample> = p.batch.iter().map(|&i| &p.dataset.samples[i]).collect();
            model.gradient_check(&params, &batch, DEFAULT_EPSILON, usize::MAX, problem_seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionLine {
    model: String,
    id: u64,
    day: u32,
    predicted: f64,
    actual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expected_counts: Option<Vec<f64>>,
}

/// One JSON object per scored sample, in day then scoring order.
pub fn write_predictions(path: &Path, model: ModelKind, days: &[DayPredictions]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for day in days {
        for r in &day.rows {
            let line = PredictionLine {
                model: model.name().to_string(),
                id: r.sample_id,
                day: r.day,
                predicted: r.predicted,
                actual: r.actual,
                expected_counts: r.expected_counts.clone(),
            };
            let text = serde_json::to_string(&line).expect("plain data serializes");
            writeln!(out, "{text}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a predictions file back as per-day record lists (ascending day).
/// Records grouped by evaluation day.
pub type DayRecords = Vec<(u32, Vec<PredictionRecord>)>;

pub fn read_predictions(path: &Path) -> Result<(String, DayRecords)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut model = None;
    let mut days: Vec<(u32, Vec<PredictionRecord>)> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |field: &str, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            field: field.to_string(),
            reason,
        };
        let rec: PredictionLine =
            serde_json::from_str(&line).map_err(|e| parse_err("record", e.to_string()))?;
        match &model {
            None => model = Some(rec.model.clone()),
            Some(m) if *m != rec.model => {
                return Err(parse_err("model", format!("`{}` after `{m}`", rec.model)));
            }
            Some(_) => {}
        }
        let record = PredictionRecord {
            sample_id: rec.id,
            predicted: rec.predicted,
            actual: rec.actual,
        };
        match days.last_mut() {
            Some((d, records)) if *d == rec.day => records.push(record),
            Some((d, _)) if *d > rec.day => {
                return Err(parse_err("day", format!("day {} after day {d}", rec.day)));
            }
            _ => days.push((rec.day, vec![record])),
        }
    }
    let model = model.ok_or_else(|| {
        Error::InvalidArgument(format!("{} holds no predictions", path.display()))
    })?;
    Ok((model, days))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::PredictionRow;

    #[test]
    fn tiny_problems_vary_and_have_mixed_batches() {
        let a = tiny_problem(1).unwrap();
        let b = tiny_problem(2).unwrap();
        assert_eq!(a.batch.len(), 8);
        assert!(a
            .batch
            .iter()
            .any(|&i| a.dataset.samples[i].ltv_label().unwrap() > 0.0));
        assert!(a
            .batch
            .iter()
            .any(|&i| a.dataset.samples[i].ltv_label().unwrap() == 0.0));
        assert!(
            a.dataset.catalog != b.dataset.catalog
                || a.model != b.model
                || a.dataset.feature_dim != b.dataset.feature_dim
        );
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let row = |id, day, predicted: f64| PredictionRow {
            sample_id: id,
            day,
            predicted,
            actual: 0.1 + predicted / 3.0,
            expected_counts: Some(vec![predicted / 7.0]),
        };
        let days = vec![
            DayPredictions {
                day: 3,
                rows: vec![row(5, 3, 1.0 / 3.0), row(2, 3, 0.0)],
            },
            DayPredictions {
                day: 4,
                rows: vec![row(9, 4, 1e-300)],
            },
        ];
        write_predictions(&path, ModelKind::Caltv, &days).unwrap();
        let (model, back) = read_predictions(&path).unwrap();
        assert_eq!(model, "caltv");
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, records_of(&days[0]));
        assert_eq!(back[1].1, records_of(&days[1]));
    }

    #[test]
    fn bad_prediction_lines_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(
            &path,
            "{\"model\":\"mse\",\"id\":1,\"day\":2,\"predicted\":1.0,\"actual\":0.0}\n{\"model\":\"mse\",\"id\":2}\n",
        )
        .unwrap();
        match read_predictions(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
