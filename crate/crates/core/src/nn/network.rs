//! Shared trunk (embeddings + ReLU MLP) with a linear output layer.
//!
//! Batches are stored `(rows, features)`. The output layer is linear; each
//! model head interprets its slice of the output row (softmax segments,
//! ZILN parameters, or a regression value).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::dataset::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub cardinality: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkConfig {
    pub dense_dim: usize,
    pub embeddings: Vec<EmbeddingSpec>,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl TrunkConfig {
    pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];

    /// Dense features followed by every embedding row, concatenated.
    pub fn input_dim(&self) -> usize {
        self.dense_dim + self.embeddings.iter().map(|e| e.width).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::config(
                "hidden_dims",
                "at least one hidden layer is required",
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config(
                "hidden_dims",
                "layer widths must be positive",
            ));
        }
        if self.input_dim() == 0 {
            return Err(Error::config("dense_dim", "the network has no inputs"));
        }
        if self
            .embeddings
            .iter()
            .any(|e| e.cardinality == 0 || e.width == 0)
        {
            return Err(Error::config(
                "embeddings",
                "cardinality and width must be positive",
            ));
        }
        Ok(())
    }
}

/// Row-major feature batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub dense: Array2<f64>,
    /// `(rows, embedding tables)`.
    pub categorical: Array2<u32>,
}

impl FeatureBatch {
    pub fn from_samples<'a, I>(samples: I, dense_dim: usize, n_tables: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sample>,
        I::IntoIter: ExactSizeIterator,
    {
        let iter = samples.into_iter();
        let rows = iter.len();
        let mut dense = Array2::zeros((rows, dense_dim));
        let mut categorical = Array2::zeros((rows, n_tables));
        for (r, s) in iter.enumerate() {
            if s.dense.len() != dense_dim {
                return Err(Error::dims(
                    format!("dense features of sample {}", s.id),
                    dense_dim,
                    s.dense.len(),
                ));
            }
            if s.categorical.len() != n_tables {
                return Err(Error::dims(
                    format!("categorical ids of sample {}", s.id),
                    n_tables,
                    s.categorical.len(),
                ));
            }
            dense.row_mut(r).assign(&ndarray::aview1(&s.dense));
            categorical
                .row_mut(r)
                .assign(&ndarray::aview1(&s.categorical));
        }
        Ok(FeatureBatch { dense, categorical })
    }

    pub fn rows(&self) -> usize {
        self.dense.nrows()
    }
}

/// Activations kept from [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    categorical: Array2<u32>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Post-activation of every hidden layer.
    act: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    /// Trunk representation: the last hidden layer, one row per input row.
    pub fn hidden(&self) -> &Array2<f64> {
        self.act.last().expect("at least one hidden layer")
    }

    /// Linear output layer, one row per input row.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    trunk: TrunkConfig,
    output_dim: usize,
    shapes: Vec<(String, Vec<usize>)>,
}

fn embedding_name(i: usize) -> String {
    format!("embedding.{i}")
}

fn weight_name(l: usize) -> String {
    format!("hidden.{l}.weight")
}

fn bias_name(l: usize) -> String {
    format!("hidden.{l}.bias")
}

pub const OUTPUT_WEIGHT: &str = "output.weight";
pub const OUTPUT_BIAS: &str = "output.bias";

impl Network {
    pub fn new(trunk: TrunkConfig, output_dim: usize) -> Result<Self> {
        trunk.validate()?;
        if output_dim == 0 {
            return Err(Error::InvalidArgument(
                "output dimension must be positive".into(),
            ));
        }
        let mut shapes = Vec::new();
        for (i, e) in trunk.embeddings.iter().enumerate() {
            shapes.push((embedding_name(i), vec![e.cardinality, e.width]));
        }
        let mut fan_in = trunk.input_dim();
        for (l, &width) in trunk.hidden_dims.iter().enumerate() {
            shapes.push((weight_name(l), vec![width, fan_in]));
            shapes.push((bias_name(l), vec![width]));
            fan_in = width;
        }
        shapes.push((OUTPUT_WEIGHT.to_string(), vec![output_dim, fan_in]));
        shapes.push((OUTPUT_BIAS.to_string(), vec![output_dim]));
        Ok(Network {
            trunk,
            output_dim,
            shapes,
        })
    }

    pub fn trunk(&self) -> &TrunkConfig {
        &self.trunk
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams::zeros(&self.shapes)
    }

    /// Glorot-uniform weights and embedding tables (`±sqrt(6 / (fan_in + fan_out))`),
    /// zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> ModelParams {
        let mut params = self.zero_params();
        let specs = params.tensors().to_vec();
        for spec in specs {
            if spec.shape.len() != 2 {
                continue;
            }
            let bound = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
            for v in &mut params.values_mut()[spec.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        let expected: usize = self
            .shapes
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if params.len() != expected || params.tensors().len() != self.shapes.len() {
            return Err(Error::dims("parameter vector", expected, params.len()));
        }
        Ok(())
    }

    fn matrix<'a>(&self, params: &'a ModelParams, name: &str) -> ArrayView2<'a, f64> {
        let spec = params.spec(name).expect("layout checked");
        ArrayView2::from_shape(
            (spec.shape[0], spec.shape[1]),
            &params.values()[spec.range()],
        )
        .expect("shape matches layout")
    }

    fn vector<'a>(&self, params: &'a ModelParams, name: &str) -> ndarray::ArrayView1<'a, f64> {
        ndarray::aview1(params.tensor(name).expect("layout checked"))
    }

    pub fn forward(&self, params: &ModelParams, batch: &FeatureBatch) -> Result<ForwardCache> {
        self.check_params(params)?;
        let rows = batch.rows();
        if batch.dense.ncols() != self.trunk.dense_dim {
            return Err(Error::dims(
                "dense feature width",
                self.trunk.dense_dim,
                batch.dense.ncols(),
            ));
        }
        if batch.categorical.ncols() != self.trunk.embeddings.len() {
            return Err(Error::dims(
                "categorical id columns",
                self.trunk.embeddings.len(),
                batch.categorical.ncols(),
            ));
        }

        let mut input = Array2::zeros((rows, self.trunk.input_dim()));
        input
            .slice_mut(s![.., ..self.trunk.dense_dim])
            .assign(&batch.dense);
        let mut col = self.trunk.dense_dim;
        for (i, e) in self.trunk.embeddings.iter().enumerate() {
            let table = self.matrix(params, &embedding_name(i));
            for r in 0..rows {
                let id = batch.categorical[[r, i]] as usize;
                if id >= e.cardinality {
                    return Err(Error::InvalidArgument(format!(
                        "categorical id {id} outside 0..{} in column {i}",
                        e.cardinality
                    )));
                }
                input
                    .slice_mut(s![r, col..col + e.width])
                    .assign(&table.row(id));
            }
            col += e.width;
        }

        let mut pre = Vec::with_capacity(self.trunk.hidden_dims.len());
        let mut act: Vec<Array2<f64>> = Vec::with_capacity(self.trunk.hidden_dims.len());
        for (l, &width) in self.trunk.hidden_dims.iter().enumerate() {
            let prev = if l == 0 { &input } else { &act[l - 1] };
            let mut z = Array2::zeros((rows, width));
            affine(
                prev,
                self.matrix(params, &weight_name(l)),
                self.vector(params, &bias_name(l)),
                &mut z,
            );
            let a = z.mapv(|v| v.max(0.0));
            pre.push(z);
            act.push(a);
        }
        let mut output = Array2::zeros((rows, self.output_dim));
        affine(
            act.last().expect("non-empty"),
            self.matrix(params, OUTPUT_WEIGHT),
            self.vector(params, OUTPUT_BIAS),
            &mut output,
        );
        Ok(ForwardCache {
            input,
            categorical: batch.categorical.clone(),
            pre,
            act,
            output,
        })
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the output layer (`rows x output_dim`).
    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &ForwardCache,
        d_output: &Array2<f64>,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if d_output.dim() != cache.output.dim() {
            return Err(Error::dims(
                "output gradient",
                cache.output.len(),
                d_output.len(),
            ));
        }
        let mut grad = self.zero_params();
        let layers = self.trunk.hidden_dims.len();

        accumulate_affine_grad(
            &mut grad,
            OUTPUT_WEIGHT,
            OUTPUT_BIAS,
            d_output,
            &cache.act[layers - 1],
        );
        let mut d_act = d_output.dot(&self.matrix(params, OUTPUT_WEIGHT));

        for l in (0..layers).rev() {
            let mut d_pre = d_act;
            ndarray::Zip::from(&mut d_pre)
                .and(&cache.pre[l])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            let prev = if l == 0 {
                &cache.input
            } else {
                &cache.act[l - 1]
            };
            accumulate_affine_grad(&mut grad, &weight_name(l), &bias_name(l), &d_pre, prev);
            d_act = d_pre.dot(&self.matrix(params, &weight_name(l)));
        }

        if !self.trunk.embeddings.is_empty() {
            let mut col = self.trunk.dense_dim;
            for (i, e) in self.trunk.embeddings.iter().enumerate() {
                let range = grad.spec(&embedding_name(i)).expect("layout").range();
                let table = &mut grad.values_mut()[range];
                for r in 0..cache.categorical.nrows() {
                    let id = cache.categorical[[r, i]] as usize;
                    let dst = &mut table[id * e.width..(id + 1) * e.width];
                    for (d, g) in dst.iter_mut().zip(d_act.slice(s![r, col..col + e.width])) {
                        *d += g;
                    }
                }
                col += e.width;
            }
        }
        Ok(grad.values().to_vec())
    }
}

/// `out = x W^T + b`.
fn affine(
    x: &Array2<f64>,
    weight: ArrayView2<'_, f64>,
    bias: ndarray::ArrayView1<'_, f64>,
    out: &mut Array2<f64>,
) {
    let dim = out.dim();
    out.assign(&bias.broadcast(dim).expect("bias broadcasts"));
    general_mat_mul(1.0, x, &weight.t(), 1.0, out);
}

fn accumulate_affine_grad(
    grad: &mut ModelParams,
    weight: &str,
    bias: &str,
    d_out: &Array2<f64>,
    input: &Array2<f64>,
) {
    let spec = grad.spec(weight).expect("layout").clone();
    {
        let mut gw = ArrayViewMut2::from_shape(
            (spec.shape[0], spec.shape[1]),
            &mut grad.values_mut()[spec.range()],
        )
        .expect("shape");
        general_mat_mul(1.0, &d_out.t(), input, 1.0, &mut gw);
    }
    let gb = grad.tensor_mut(bias).expect("layout");
    for (g, s) in gb.iter_mut().zip(d_out.sum_axis(Axis(0))) {
        *g += s;
    }
}
