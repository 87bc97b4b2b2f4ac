//! A trainable LTV model: shared trunk plus one of the three heads.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::{MseHead, ZilnHead, SIGMA_MAX};
use crate::caltv_model::CaltvHead;
use crate::dataset::{Dataset, Labels, Money, PriceCatalog, Sample};
use crate::error::{Error, Result};
use crate::nn::gradcheck::{check_gradient, GradCheckReport};
use crate::nn::{Activation, EmbeddingSpec, FeatureBatch, ModelParams, Network, TrunkConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Caltv,
    Ziln,
    Mse,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Caltv, ModelKind::Ziln, ModelKind::Mse];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Caltv => "caltv",
            ModelKind::Ziln => "ziln",
            ModelKind::Mse => "mse",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caltv" => Ok(ModelKind::Caltv),
            "ziln" => Ok(ModelKind::Ziln),
            "mse" => Ok(ModelKind::Mse),
            other => Err(Error::InvalidArgument(format!(
                "unknown model `{other}` (expected caltv, ziln or mse)"
            ))),
        }
    }
}

/// Everything needed to rebuild a model; echoed into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub trunk: TrunkConfig,
    pub catalog: PriceCatalog,
}

impl ModelSpec {
    /// Trunk sized for `dataset`: one embedding table per categorical column.
    pub fn for_dataset(
        kind: ModelKind,
        dataset: &Dataset,
        hidden_dims: Vec<usize>,
        embedding_widths: &[usize],
    ) -> Result<Self> {
        if embedding_widths.len() != dataset.cardinalities.len() {
            return Err(Error::config(
                "embedding_widths",
                format!(
                    "{} widths for {} categorical columns",
                    embedding_widths.len(),
                    dataset.cardinalities.len()
                ),
            ));
        }
        let embeddings = dataset
            .cardinalities
            .iter()
            .zip(embedding_widths)
            .map(|(&c, &w)| EmbeddingSpec {
                cardinality: c as usize,
                width: w,
            })
            .collect();
        Ok(ModelSpec {
            kind,
            trunk: TrunkConfig {
                dense_dim: dataset.feature_dim,
                embeddings,
                hidden_dims,
                activation: Activation::Relu,
            },
            catalog: dataset.catalog.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Head {
    Caltv(CaltvHead),
    Ziln(ZilnHead),
    Mse(MseHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ltv: Money,
    /// Per-category expected counts (CALTV only).
    pub expected_counts: Option<Vec<f64>>,
}

/// Rows per forward pass when scoring large sample sets.
const CHUNK: usize = 4096;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LtvModel {
    spec: ModelSpec,
    network: Network,
    head: Head,
}

fn labels_of(s: &Sample) -> Result<&Labels> {
    s.labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} is unlabeled", s.id)))
}

impl LtvModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let head = match spec.kind {
            ModelKind::Caltv => Head::Caltv(CaltvHead::new(spec.catalog.clone())),
            ModelKind::Ziln => Head::Ziln(ZilnHead),
            ModelKind::Mse => Head::Mse(MseHead),
        };
        let output_dim = match &head {
            Head::Caltv(h) => h.output_dim(),
            Head::Ziln(_) => ZilnHead::OUTPUT_DIM,
            Head::Mse(_) => MseHead::OUTPUT_DIM,
        };
        let network = Network::new(spec.trunk.clone(), output_dim)?;
        Ok(LtvModel {
            spec,
            network,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        self.network
            .init_params(&mut seed::stream_rng(seed::mix(seed, seed::TAG_INIT), 0))
    }

    /// Output biases that reproduce the label prior of `samples` at
    /// initialization: smoothed class log-frequencies per count head
    /// (CALTV), payer log-odds and log-spend moments (ZILN), the mean label
    /// (MSE). Without this the count heads start out predicting 2.5 orders
    /// in every category.
    pub fn prior_bias(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let labels: Vec<&Labels> = samples
            .iter()
            .map(|s| labels_of(s))
            .collect::<Result<_>>()?;
        let n = labels.len() as f64;
        Ok(match &self.head {
            Head::Caltv(_) => {
                let mut bias = Vec::new();
                for (m, &cap) in self.spec.catalog.caps().iter().enumerate() {
                    let mut freq = vec![1.0; cap as usize + 1];
                    for l in &labels {
                        freq[l.counts[m] as usize] += 1.0;
                    }
                    let total = n + freq.len() as f64;
                    bias.extend(freq.iter().map(|f| (f / total).ln()));
                }
                bias
            }
            Head::Ziln(_) => {
                let logs: Vec<f64> = labels
                    .iter()
                    .filter(|l| l.ltv > 0.0)
                    .map(|l| l.ltv.ln())
                    .collect();
                let k = logs.len() as f64;
                let rate = (k + 1.0) / (n + 2.0);
                let mean = if logs.is_empty() {
                    0.0
                } else {
                    logs.iter().sum::<f64>() / k
                };
                let var = if logs.len() < 2 {
                    1.0
                } else {
                    logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
                };
                let sigma = var.sqrt().clamp(0.1, SIGMA_MAX);
                // inverse softplus
                vec![
                    (rate / (1.0 - rate)).ln(),
                    mean,
                    sigma + (-(-sigma).exp_m1()).ln(),
                ]
            }
            Head::Mse(_) => {
                vec![if n > 0.0 {
                    labels.iter().map(|l| l.ltv).sum::<f64>() / n
                } else {
                    0.0
                }]
            }
        })
    }

    /// Random trunk ([`LtvModel::init_params`]) with output biases set to
    /// [`LtvModel::prior_bias`] of `samples`.
    pub fn init_params_with_prior(&self, seed: u64, samples: &[&Sample]) -> Result<ModelParams> {
        let mut params = self.init_params(seed);
        let bias = self.prior_bias(samples)?;
        params
            .tensor_mut("output.bias")
            .expect("output bias")
            .copy_from_slice(&bias);
        Ok(params)
    }

    pub fn batch(&self, samples: &[&Sample]) -> Result<FeatureBatch> {
        FeatureBatch::from_samples(
            samples.iter().copied(),
            self.spec.trunk.dense_dim,
            self.spec.trunk.embeddings.len(),
        )
    }

    fn sample_loss(&self, out: &[f64], labels: &Labels, grad: &mut [f64]) -> Result<f64> {
        match &self.head {
            Head::Caltv(h) => h.loss_and_grad(out, &labels.counts, grad),
            Head::Ziln(h) => h.loss_and_grad(out, labels.ltv, grad),
            Head::Mse(h) => h.loss_and_grad(out, labels.ltv, grad),
        }
    }

    fn head_loss(&self, output: &Array2<f64>, samples: &[&Sample]) -> Result<(f64, Array2<f64>)> {
        let mut d_out = Array2::zeros(output.dim());
        let mut total = 0.0;
        for (r, s) in samples.iter().enumerate() {
            let labels = labels_of(s)?;
            let out = output.row(r);
            let mut g = d_out.row_mut(r);
            total += self.sample_loss(
                out.as_slice().expect("row-major"),
                labels,
                g.as_slice_mut().expect("row-major"),
            )?;
        }
        Ok((total, d_out))
    }

    /// Summed loss over `samples` and its gradient.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        samples: &[&Sample],
    ) -> Result<(f64, Vec<f64>)> {
        let batch = self.batch(samples)?;
        let cache = self.network.forward(params, &batch)?;
        let (loss, d_out) = self.head_loss(cache.output(), samples)?;
        let grad = self.network.backward(params, &cache, &d_out)?;
        Ok((loss, grad))
    }

    /// Summed loss over `samples`, forward only.
    pub fn loss(&self, params: &ModelParams, samples: &[&Sample]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in samples.chunks(CHUNK) {
            let cache = self.network.forward(params, &self.batch(chunk)?)?;
            total += self.head_loss(cache.output(), chunk)?.0;
        }
        Ok(total)
    }

    pub fn predict(&self, params: &ModelParams, samples: &[&Sample]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(CHUNK) {
            let cache = self.network.forward(params, &self.batch(chunk)?)?;
            for row in cache.output().rows() {
                let row = row.as_slice().expect("row-major");
                out.push(match &self.head {
                    Head::Caltv(h) => {
                        let p = h.predict(row);
                        Prediction {
                            ltv: p.ltv,
                            expected_counts: Some(p.expected_counts),
                        }
                    }
                    Head::Ziln(h) => Prediction {
                        ltv: h.predict(row),
                        expected_counts: None,
                    },
                    Head::Mse(h) => Prediction {
                        ltv: h.predict(row),
                        expected_counts: None,
                    },
                });
            }
        }
        Ok(out)
    }

    /// Shifts hidden biases until no pre-activation of `samples` lies within
    /// `KINK_MARGIN` of the ReLU kink, so central differences stay on one side.
    pub fn nudge_off_kinks(
        &self,
        params: &ModelParams,
        samples: &[&Sample],
    ) -> Result<ModelParams> {
        let batch = self.batch(samples)?;
        let mut nudged = params.clone();
        for _ in 0..200 {
            let cache = self.network.forward(&nudged, &batch)?;
            let mut moved = false;
            for (l, pre) in cache.pre_activations().iter().enumerate() {
                let bias = nudged
                    .tensor_mut(&format!("hidden.{l}.bias"))
                    .expect("hidden bias");
                for (j, col) in pre.columns().into_iter().enumerate() {
                    if col.iter().any(|z| z.abs() < KINK_MARGIN) {
                        bias[j] += 4.0 * KINK_MARGIN;
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        Ok(nudged)
    }

    /// Analytic gradient vs central differences of the summed batch loss.
    /// Parameters are first nudged away from ReLU kinks.
    pub fn gradient_check(
        &self,
        params: &ModelParams,
        samples: &[&Sample],
        epsilon: f64,
        max_coords: usize,
        seed: u64,
    ) -> Result<GradCheckReport> {
        let point = self.nudge_off_kinks(params, samples)?;
        let (_, analytic) = self.loss_and_grad(&point, samples)?;
        let mut probe = point.clone();
        let mut failure = None;
        let report = check_gradient(
            |x| {
                probe.values_mut().copy_from_slice(x);
                match self.loss(&probe, samples) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            point.values(),
            &analytic,
            epsilon,
            max_coords,
            &mut seed::stream_rng(seed::mix(seed, seed::TAG_GRADCHECK), 0),
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }
}
