//! Three operations behind the static page in `www/`: dataset explorer,
//! head reconstruction explorer and a small three-model comparison. Each
//! takes and returns JSON so the page needs no bindings beyond strings.

use caltv::caltv_model::{predict_ltv, HeadOutputs};
use caltv::dataset::{generate_synthetic, GeneratorConfig, PriceCatalog, DEFAULT_CAP};
use caltv::error::{Error, Result};
use caltv::evaluation::EvalConfig;
use caltv::labeling::{attribute_payments, categorize_price, label_samples, LabelConfig};
use caltv::model::ModelKind;
use caltv::pipeline::{evaluate_model, train_model, ModelConfig, ProtocolConfig};
use caltv::train::{FinetuneConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const MAX_EXPLORE_SAMPLES: usize = 200_000;
const MAX_COMPARE_SAMPLES: usize = 30_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ExploreRequest {
    pub n_samples: usize,
    pub payer_rate: f64,
    pub whale_rate: f64,
    pub window_hours: f64,
    pub seed: u64,
}

impl Default for ExploreRequest {
    fn default() -> Self {
        ExploreRequest {
            n_samples: 20_000,
            payer_rate: 0.05,
            whale_rate: 0.02,
            window_hours: 24.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryStats {
    pub price: f64,
    pub payers: usize,
    pub mean_count: f64,
    /// Samples whose raw count in this category exceeded the cap.
    pub truncated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreResponse {
    pub n_samples: usize,
    pub payers: usize,
    pub window_payers: usize,
    pub total_spend: f64,
    pub top1_share: f64,
    pub top10_share: f64,
    pub histogram: Vec<HistogramBin>,
    pub categories: Vec<CategoryStats>,
}

fn top_share(sorted_desc: &[f64], n: usize, fraction: f64) -> f64 {
    let total: f64 = sorted_desc.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let k = ((n as f64 * fraction).ceil() as usize).min(sorted_desc.len());
    sorted_desc[..k].iter().sum::<f64>() / total
}

pub fn explore(req: &ExploreRequest) -> Result<ExploreResponse> {
    if req.n_samples > MAX_EXPLORE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_EXPLORE_SAMPLES} samples"
        )));
    }
    let mut ds = generate_synthetic(&GeneratorConfig {
        n_samples: req.n_samples,
        payer_rate: req.payer_rate,
        whale_rate: req.whale_rate,
        seed: req.seed,
        ..GeneratorConfig::default()
    })?;
    let labels = LabelConfig::new(req.window_hours, ds.catalog.clone())?;
    label_samples(&mut ds.samples, &labels);

    let mut spend: Vec<f64> = ds
        .samples
        .iter()
        .filter_map(|s| s.ltv_label())
        .filter(|&v| v > 0.0)
        .collect();
    spend.sort_by(|a, b| b.total_cmp(a));

    // log10-spaced bins from 1 up to the largest spend
    let max = spend.first().copied().unwrap_or(1.0).max(1.0);
    let n_bins = 16;
    let top = max.log10() + 1e-9;
    let mut histogram: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            lo: 10f64.powf(top * b as f64 / n_bins as f64),
            hi: 10f64.powf(top * (b + 1) as f64 / n_bins as f64),
            count: 0,
        })
        .collect();
    for &v in &spend {
        let b = ((v.max(1.0).log10() / top) * n_bins as f64) as usize;
        histogram[b.min(n_bins - 1)].count += 1;
    }

    let catalog = &ds.catalog;
    let mut categories: Vec<CategoryStats> = catalog
        .prices()
        .iter()
        .map(|&price| CategoryStats {
            price,
            payers: 0,
            mean_count: 0.0,
            truncated: 0,
        })
        .collect();
    for s in &ds.samples {
        let mut raw = vec![0u32; catalog.len()];
        for t in attribute_payments(s, &labels) {
            raw[categorize_price(t.amount, catalog)?] += 1;
        }
        let counts = &s.labels.as_ref().expect("labeled above").counts;
        for (m, c) in categories.iter_mut().enumerate() {
            if counts[m] > 0 {
                c.payers += 1;
            }
            c.mean_count += f64::from(counts[m]);
            if raw[m] > catalog.caps()[m] {
                c.truncated += 1;
            }
        }
    }
    let n = ds.samples.len().max(1) as f64;
    for c in &mut categories {
        c.mean_count /= n;
    }

    Ok(ExploreResponse {
        n_samples: ds.samples.len(),
        payers: ds
            .samples
            .iter()
            .filter(|s| !s.transactions.is_empty())
            .count(),
        window_payers: spend.len(),
        total_spend: spend.iter().sum(),
        top1_share: top_share(&spend, ds.samples.len(), 0.01),
        top10_share: top_share(&spend, ds.samples.len(), 0.10),
        histogram,
        categories,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReconstructRequest {
    /// Mean raw purchase count per price category, before truncation.
    pub rates: Vec<f64>,
    #[serde(default)]
    pub cap: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HeadView {
    pub price: f64,
    pub probs: Vec<f64>,
    pub expected_count: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructResponse {
    pub heads: Vec<HeadView>,
    pub ltv: f64,
    /// `sum(price * rate)`, the value the heads would give without caps.
    pub uncapped: f64,
}

/// Poisson(rate) over `0..=cap` with the tail folded into `cap`.
pub fn capped_poisson(rate: f64, cap: u32) -> Vec<f64> {
    let mut probs = Vec::with_capacity(cap as usize + 1);
    let mut p = (-rate).exp();
    let mut below = 0.0;
    for k in 0..cap {
        probs.push(p);
        below += p;
        p *= rate / f64::from(k + 1);
    }
    probs.push((1.0 - below).max(0.0));
    probs
}

pub fn reconstruct(req: &ReconstructRequest) -> Result<ReconstructResponse> {
    let cap = req.cap.unwrap_or(DEFAULT_CAP);
    let base = PriceCatalog::default();
    if req.rates.len() != base.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} rates",
            base.len()
        )));
    }
    if req.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidArgument(
            "rates must be finite and non-negative".into(),
        ));
    }
    let catalog = PriceCatalog::with_uniform_cap(base.prices().to_vec(), cap)?;
    let rows: Vec<Vec<f64>> = req.rates.iter().map(|&r| capped_poisson(r, cap)).collect();
    let pred = predict_ltv(&HeadOutputs { rows: rows.clone() }, &catalog)?;
    let heads = rows
        .into_iter()
        .zip(catalog.prices())
        .zip(&pred.expected_counts)
        .map(|((probs, &price), &e)| HeadView {
            price,
            probs,
            expected_count: e,
            contribution: price * e,
        })
        .collect();
    Ok(ReconstructResponse {
        heads,
        ltv: pred.ltv,
        uncapped: req
            .rates
            .iter()
            .zip(catalog.prices())
            .map(|(r, p)| r * p)
            .sum(),
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct CompareRequest {
    pub n_samples: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CompareRequest {
    fn default() -> Self {
        CompareRequest {
            n_samples: 12_000,
            epochs: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelView {
    pub model: String,
    pub aulc: Option<f64>,
    pub gbias_var: f64,
    pub gbias_var_top: f64,
    pub lorenz: Vec<[f64; 2]>,
    pub decile_bias: Vec<f64>,
    pub zero_actual: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareResponse {
    pub evaluated: usize,
    pub truth: Vec<[f64; 2]>,
    pub models: Vec<ModelView>,
}

fn points(curve: &Option<Vec<caltv::evaluation::LorenzPoint>>) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0, 0.0]];
    out.extend(curve.iter().flatten().map(|p| [p.fraction, p.share]));
    out
}

pub fn compare(req: &CompareRequest) -> Result<CompareResponse> {
    if req.n_samples > MAX_COMPARE_SAMPLES || req.epochs > 20 {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_COMPARE_SAMPLES} samples and 20 epochs"
        )));
    }
    let gen = GeneratorConfig {
        n_samples: req.n_samples,
        n_days: 10,
        payer_rate: 0.15,
        seed: req.seed,
        ..GeneratorConfig::default()
    };
    let mut ds = generate_synthetic(&gen)?;
    label_samples(
        &mut ds.samples,
        &LabelConfig::new(24.0, ds.catalog.clone())?,
    );
    let model_cfg = ModelConfig {
        hidden_dims: vec![32, 16],
        embedding_widths: vec![4, 2],
    };
    let protocol = ProtocolConfig { train_days: 7 };
    let eval = EvalConfig {
        lorenz_groups: 50,
        ..EvalConfig::default()
    };
    let mut models = Vec::new();
    let mut truth = Vec::new();
    let mut evaluated = 0;
    for kind in ModelKind::ALL {
        let train = TrainConfig {
            epochs: req.epochs,
            learning_rate: 3e-3,
            seed: req.seed,
            ..TrainConfig::default()
        };
        let trained = train_model(kind, &ds, &model_cfg, &train, &protocol)?;
        let ev = evaluate_model(
            &trained.model,
            &trained.params,
            &ds,
            &train,
            &FinetuneConfig::default(),
            &protocol,
            &eval,
        )?;
        let pooled = ev.report.pooled;
        evaluated = pooled.n;
        truth = points(&pooled.truth_lorenz);
        models.push(ModelView {
            model: kind.name().to_string(),
            aulc: pooled.aulc,
            gbias_var: pooled.gbias_var,
            gbias_var_top: pooled.gbias_var_top,
            lorenz: points(&pooled.lorenz),
            decile_bias: pooled.groups.iter().map(|g| g.bias).collect(),
            zero_actual: pooled.groups.iter().map(|g| g.zero_actual).collect(),
        });
    }
    Ok(CompareResponse {
        evaluated,
        truth,
        models,
    })
}

fn run_json<Req, Resp>(
    input: &str,
    op: fn(&Req) -> Result<Resp>,
) -> std::result::Result<String, String>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
{
    let req: Req = serde_json::from_str(if input.trim().is_empty() { "{}" } else { input })
        .map_err(|e| format!("bad request: {e}"))?;
    let resp = op(&req).map_err(|e| e.to_string())?;
    serde_json::to_string(&resp).map_err(|e| e.to_string())
}

pub fn explore_json(input: &str) -> std::result::Result<String, String> {
    run_json(input, explore)
}

pub fn reconstruct_json(input: &str) -> std::result::Result<String, String> {
    run_json(input, reconstruct)
}

pub fn compare_json(input: &str) -> std::result::Result<String, String> {
    run_json(input, compare)
}

#[wasm_bindgen(js_name = exploreDataset)]
pub fn explore_dataset(input: &str) -> std::result::Result<String, JsValue> {
    explore_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = reconstructHeads)]
pub fn reconstruct_heads(input: &str) -> std::result::Result<String, JsValue> {
    reconstruct_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = compareModels)]
pub fn compare_models(input: &str) -> std::result::Result<String, JsValue> {
    compare_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = defaultPrices)]
pub fn default_prices() -> Vec<f64> {
    PriceCatalog::default().prices().to_vec()
}
