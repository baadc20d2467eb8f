//! The multiview encoder: a shared multilayer trunk followed by one head per
//! view. Every view head owns the last hidden layer and the output projection,
//! so an item's embedding matrix has one row per head, all computed from the
//! same trunk activation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One item image, stored row-major as `height x width x channels` with
/// values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ItemTensor {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("item dimensions must be positive".into()));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "item has {} values, expected {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Numeric(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of the encoder.
///
/// `hidden` lists the hidden layer widths. All but the last are shared trunk
/// layers; the last hidden layer and the projection to `embed_dim` are
/// replicated once per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub num_views: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
            hidden: vec![256, 64],
            embed_dim: 8,
            num_views: 2,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn input_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn trunk_widths(&self) -> &[usize] {
        &self.hidden[..self.hidden.len().saturating_sub(1)]
    }

    pub fn head_width(&self) -> usize {
        *self.hidden.last().expect("validated config has hidden layers")
    }

    /// Width of the trunk output `z`.
    pub fn trunk_out(&self) -> usize {
        self.trunk_widths().last().copied().unwrap_or(self.input_len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if self.num_views == 0 {
            return Err(Error::Config("number of views must be at least 1".into()));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    fn uniform_init<R: Rng>(inputs: usize, outputs: usize, bound: f64, rng: &mut R) -> Self {
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || {
            (2.0 * rng.random::<f64>() - 1.0) * bound
        });
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewHead {
    pub hidden: Dense,
    pub output: Dense,
}

/// Per-worker view preferences, one row of `V` reals per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerPrefs {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    weights: Array2<f64>,
}

impl WorkerPrefs {
    pub fn new(ids: Vec<String>, weights: Array2<f64>) -> Result<Self> {
        if ids.len() != weights.nrows() {
            return Err(Error::Shape(format!(
                "{} worker ids for {} preference rows",
                ids.len(),
                weights.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            validate_worker_id(id)?;
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::Config(format!("duplicate worker id `{id}`")));
            }
        }
        Ok(Self {
            ids,
            index,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_views(&self) -> usize {
        self.weights.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, m: usize) -> ArrayView1<'_, f64> {
        self.weights.row(m)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    /// Appends a row for a new worker and returns its index.
    pub fn push(&mut self, id: &str, row: &[f64]) -> Result<usize> {
        validate_worker_id(id)?;
        if row.len() != self.num_views() {
            return Err(Error::Shape(format!(
                "preference row has {} entries, expected {}",
                row.len(),
                self.num_views()
            )));
        }
        if self.index.contains_key(id) {
            return Err(Error::Config(format!("duplicate worker id `{id}`")));
        }
        self.weights
            .push_row(ArrayView1::from(row))
            .map_err(|e| Error::Shape(e.to_string()))?;
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        Ok(self.ids.len() - 1)
    }

    fn zeros_like(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            index: self.index.clone(),
            weights: Array2::zeros(self.weights.raw_dim()),
        }
    }
}

/// Worker ids travel through comma-separated and whitespace-separated text
/// files, so they must be nonempty and free of separators.
pub fn validate_worker_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c == ',' || c.is_whitespace() || c.is_control()) {
        return Err(Error::Config(format!(
            "invalid worker id {id:?}: must be nonempty without commas or whitespace"
        )));
    }
    Ok(())
}

/// All learnable state: trunk layers, view heads and worker preferences.
///
/// The same structure doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub trunk: Vec<Dense>,
    pub heads: Vec<ViewHead>,
    pub workers: WorkerPrefs,
}

impl ModelParams {
    pub fn num_views(&self) -> usize {
        self.heads.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self
                .trunk
                .iter()
                .map(|d| Dense::zeros(d.inputs(), d.outputs()))
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| ViewHead {
                    hidden: Dense::zeros(h.hidden.inputs(), h.hidden.outputs()),
                    output: Dense::zeros(h.output.inputs(), h.output.outputs()),
                })
                .collect(),
            workers: self.workers.zeros_like(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.iter().all(Dense::is_finite)
            && self
                .heads
                .iter()
                .all(|h| h.hidden.is_finite() && h.output.is_finite())
            && self.workers.weights.iter().all(|v| v.is_finite())
    }

    /// Network tensors in a fixed order: trunk layers, then each head's
    /// hidden and output layers; weights before biases.
    pub fn network_tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for d in self
            .trunk
            .iter()
            .chain(self.heads.iter().flat_map(|h| [&h.hidden, &h.output]))
        {
            out.push(d.weight.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn network_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for d in self
            .trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flat_map(|h| [&mut h.hidden, &mut h.output]))
        {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Checks that every layer matches `config`.
    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        config.validate()?;
        let trunk = config.trunk_widths();
        if self.trunk.len() != trunk.len() {
            return Err(Error::Shape(format!(
                "trunk has {} layers, config expects {}",
                self.trunk.len(),
                trunk.len()
            )));
        }
        let mut fan_in = config.input_len();
        for (l, (layer, &width)) in self.trunk.iter().zip(trunk).enumerate() {
            check_dense(layer, fan_in, width, &format!("trunk.{l}"))?;
            fan_in = width;
        }
        if self.heads.len() != config.num_views {
            return Err(Error::Shape(format!(
                "model has {} view heads, config expects {}",
                self.heads.len(),
                config.num_views
            )));
        }
        for (v, head) in self.heads.iter().enumerate() {
            check_dense(&head.hidden, fan_in, config.head_width(), &format!("head.{v}.hidden"))?;
            check_dense(
                &head.output,
                config.head_width(),
                config.embed_dim,
                &format!("head.{v}.output"),
            )?;
        }
        if self.workers.num_views() != config.num_views {
            return Err(Error::Shape(format!(
                "worker preferences have {} columns, config expects {}",
                self.workers.num_views(),
                config.num_views
            )));
        }
        Ok(())
    }
}

fn check_dense(d: &Dense, inputs: usize, outputs: usize, name: &str) -> Result<()> {
    if d.weight.dim() != (outputs, inputs) || d.bias.len() != outputs {
        return Err(Error::Shape(format!(
            "{name} is {}x{} (+{}), expected {outputs}x{inputs} (+{outputs})",
            d.outputs(),
            d.inputs(),
            d.bias.len()
        )));
    }
    Ok(())
}

/// `V x D` embedding of one item; row `v` is the view-`v` embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewEmbedding(Array2<f64>);

impl MultiviewEmbedding {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Shape("embedding must have at least one view and dimension".into()));
        }
        Ok(Self(rows))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("embedding rows differ in length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(arr)
    }

    pub fn num_views(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self, v: usize) -> ArrayView1<'_, f64> {
        self.0.row(v)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    /// Views laid end to end, the representation used for clustering and
    /// classification metrics.
    pub fn concatenated(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// Initialises parameters for `config` with one preference row per worker.
///
/// Worker preferences are i.i.d. uniform on `[0, 1)` drawn row-major from
/// stream [`rng::STREAM_WORKER_PREFS`]. Network weights are uniform on
/// `[-b, b]` with `b = sqrt(6 / fan_in)` for hidden layers and
/// `b = sqrt(3 / fan_in)` for the output projections; biases start at zero.
pub fn init_params(config: &EncoderConfig, workers: &[String]) -> Result<ModelParams> {
    config.validate()?;
    if workers.is_empty() {
        return Err(Error::Config("at least one worker is required".into()));
    }
    let mut net_rng = rng::seeded(config.seed, rng::STREAM_NETWORK);
    let mut fan_in = config.input_len();
    let mut trunk = Vec::new();
    for &width in config.trunk_widths() {
        trunk.push(Dense::uniform_init(fan_in, width, (6.0 / fan_in as f64).sqrt(), &mut net_rng));
        fan_in = width;
    }
    let hw = config.head_width();
    let heads = (0..config.num_views)
        .map(|_| {
            let hidden = Dense::uniform_init(fan_in, hw, (6.0 / fan_in as f64).sqrt(), &mut net_rng);
            let output =
                Dense::uniform_init(hw, config.embed_dim, (3.0 / hw as f64).sqrt(), &mut net_rng);
            ViewHead { hidden, output }
        })
        .collect();

    let mut pref_rng = rng::seeded(config.seed, rng::STREAM_WORKER_PREFS);
    let weights = Array2::from_shape_simple_fn((workers.len(), config.num_views), || {
        pref_rng.random::<f64>()
    });
    Ok(ModelParams {
        trunk,
        heads,
        workers: WorkerPrefs::new(workers.to_vec(), weights)?,
    })
}

/// Intermediate activations of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input batch, `acts[l + 1]` the output of trunk layer `l`.
    acts: Vec<Array2<f64>>,
    head_hidden: Vec<Array2<f64>>,
    /// One `n x D` matrix per view.
    pub outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.acts[0].nrows()
    }

    /// Embedding of row `n` of the batch.
    pub fn embedding(&self, n: usize) -> MultiviewEmbedding {
        let rows: Vec<Vec<f64>> = self.outputs.iter().map(|o| o.row(n).to_vec()).collect();
        MultiviewEmbedding::from_rows(&rows).expect("outputs are rectangular")
    }
}

/// Runs a batch of flattened items (`n x input_len`) through the encoder.
pub fn forward_batch(
    params: &ModelParams,
    config: &EncoderConfig,
    inputs: Array2<f64>,
) -> Result<ForwardCache> {
    if inputs.ncols() != config.input_len() {
        return Err(Error::Shape(format!(
            "batch rows have {} values, encoder expects {}",
            inputs.ncols(),
            config.input_len()
        )));
    }
    let act = config.activation;
    let mut acts = vec![inputs];
    for layer in &params.trunk {
        let mut z = layer.forward(&acts.last().expect("nonempty").view());
        z.mapv_inplace(|x| act.apply(x));
        acts.push(z);
    }
    let z = acts.last().expect("nonempty");
    let mut head_hidden = Vec::with_capacity(params.heads.len());
    let mut outputs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let mut h = head.hidden.forward(&z.view());
        h.mapv_inplace(|x| act.apply(x));
        outputs.push(head.output.forward(&h.view()));
        head_hidden.push(h);
    }
    Ok(ForwardCache {
        acts,
        head_hidden,
        outputs,
    })
}

/// Accumulates network gradients into `grads` given `dL/d(outputs)` for
/// every view. Worker preference gradients are left untouched.
pub fn backward_batch(
    params: &ModelParams,
    config: &EncoderConfig,
    cache: &ForwardCache,
    grad_outputs: &[Array2<f64>],
    grads: &mut ModelParams,
) {
    let act = config.activation;
    let z = cache.acts.last().expect("nonempty");
    let mut grad_z = Array2::<f64>::zeros(z.raw_dim());
    for (v, head) in params.heads.iter().enumerate() {
        let g_out = &grad_outputs[v];
        let h = &cache.head_hidden[v];
        let gh = &mut grads.heads[v];
        gh.output.weight += &g_out.t().dot(h);
        gh.output.bias += &g_out.sum_axis(Axis(0));
        let mut g_h = g_out.dot(&head.output.weight);
        g_h.zip_mut_with(h, |g, &y| *g *= act.derivative_from_output(y));
        gh.hidden.weight += &g_h.t().dot(z);
        gh.hidden.bias += &g_h.sum_axis(Axis(0));
        grad_z += &g_h.dot(&head.hidden.weight);
    }
    let mut g = grad_z;
    for l in (0..params.trunk.len()).rev() {
        let out = &cache.acts[l + 1];
        g.zip_mut_with(out, |g, &y| *g *= act.derivative_from_output(y));
        let input = &cache.acts[l];
        grads.trunk[l].weight += &g.t().dot(input);
        grads.trunk[l].bias += &g.sum_axis(Axis(0));
        if l > 0 {
            g = g.dot(&params.trunk[l].weight);
        }
    }
}

/// Stacks items into an `n x input_len` matrix, checking dimensions.
pub fn stack_items<'a>(
    config: &EncoderConfig,
    items: impl IntoIterator<Item = &'a ItemTensor>,
) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for item in items {
        check_item(config, item)?;
        flat.extend_from_slice(item.pixels());
        n += 1;
    }
    Array2::from_shape_vec((n, config.input_len()), flat).map_err(|e| Error::Shape(e.to_string()))
}

fn check_item(config: &EncoderConfig, item: &ItemTensor) -> Result<()> {
    if (item.height, item.width, item.channels) != (config.height, config.width, config.channels) {
        return Err(Error::Shape(format!(
            "item is {}x{}x{}, encoder expects {}x{}x{}",
            item.height, item.width, item.channels, config.height, config.width, config.channels
        )));
    }
    Ok(())
}

/// Embeds one item.
pub fn forward(
    params: &ModelParams,
    config: &EncoderConfig,
    item: &ItemTensor,
) -> Result<MultiviewEmbedding> {
    let batch = stack_items(config, [item])?;
    Ok(forward_batch(params, config, batch)?.embedding(0))
}
