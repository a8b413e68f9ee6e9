use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::layer::{plan_layers, Activation, LayerPlan, LayerSpec, Padding};
use super::loss::{cross_entropy, softmax_ce_grad};
use super::ops::{add_bias_rows, add_column_sums, gemm, softmax_rows};

/// Forward-pass mode. Dropout draws its masks from the training stream and
/// is the identity in evaluation.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// A layer stack with its flat parameter vector.
///
/// Parameters are stored layer by layer, weights (row-major, `out x in` for
/// dense layers and `filters x (kh, kw, c)` for convolutions) followed by
/// biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    plans: Vec<LayerPlan>,
    params: Vec<f64>,
    seed: u64,
}

/// Activations recorded by [`Network::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    /// im2col patches for convolutions, keep-masks for dropout.
    aux: Vec<Option<Vec<f64>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Build a network with Glorot-uniform weights and zero biases.
pub fn init_network(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> Result<Network> {
    let plans = plan_layers(specs, input_shape)?;
    let total = plans.iter().map(LayerPlan::param_len).sum();
    let mut params = vec![0.0; total];
    let mut rng = Rng::new(seed);
    for plan in &plans {
        let (fan_in, fan_out) = match &plan.spec {
            LayerSpec::Dense { units, .. } => (plan.cols, *units),
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => (plan.cols, kernel_h * kernel_w * filters),
            _ => continue,
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut params[plan.weights..plan.bias] {
            *w = rng.uniform_range(-limit, limit);
        }
    }
    Ok(Network {
        specs: specs.to_vec(),
        input_shape: input_shape.to_vec(),
        plans,
        params,
        seed,
    })
}

impl Network {
    /// Rebuild a network from stored parameters.
    pub fn from_parts(
        specs: &[LayerSpec],
        input_shape: &[usize],
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let plans = plan_layers(specs, input_shape)?;
        let total: usize = plans.iter().map(LayerPlan::param_len).sum();
        if total != params.len() {
            return Err(Error::Shape(format!(
                "layer stack needs {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Network {
            specs: specs.to_vec(),
            input_shape: input_shape.to_vec(),
            plans,
            params,
            seed,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.plans
            .last()
            .map(|p| p.out_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight block of layer `index` (empty for parameter-free layers).
    pub fn weights_mut(&mut self, index: usize) -> &mut [f64] {
        let plan = &self.plans[index];
        &mut self.params[plan.weights..plan.bias]
    }

    pub fn bias_mut(&mut self, index: usize) -> &mut [f64] {
        let plan = &self.plans[index];
        let end = plan.weights + plan.param_len();
        &mut self.params[plan.bias..end]
    }

    /// Parameter range `(start, end)` owned by layer `index`.
    pub fn param_range(&self, index: usize) -> (usize, usize) {
        let plan = &self.plans[index];
        (plan.weights, plan.weights + plan.param_len())
    }

    pub fn ends_in_softmax(&self) -> bool {
        self.specs
            .last()
            .is_some_and(|s| s.activation() == Activation::Softmax)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let rows = batch.rows();
        if batch.is_empty() || rows == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if batch.row_len() != self.input_len() {
            return Err(Error::Shape(format!(
                "batch rows have {} values, network input {:?} needs {}",
                batch.row_len(),
                self.input_shape,
                self.input_len()
            )));
        }
        if !batch.is_finite() {
            return Err(Error::Numeric("non-finite value in network input".into()));
        }
        Ok(rows)
    }

    /// Network output for a batch whose leading dimension is the batch size.
    pub fn forward(&self, batch: &Tensor, mode: Mode<'_>) -> Result<Tensor> {
        let cache = self.forward_cached(batch, mode)?;
        let rows = cache.batch;
        let mut shape = vec![rows];
        shape.extend_from_slice(self.output_shape());
        Tensor::new(shape, cache.acts.into_iter().last().unwrap_or_default())
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch, Mode::Eval)
    }

    pub fn forward_cached(&self, batch: &Tensor, mode: Mode<'_>) -> Result<ForwardCache> {
        let rows = self.check_batch(batch)?;
        Ok(self.forward_raw(batch.data().to_vec(), rows, mode))
    }

    /// Forward pass on an already validated `rows x input_len` buffer.
    pub(crate) fn forward_raw(
        &self,
        input: Vec<f64>,
        rows: usize,
        mut mode: Mode<'_>,
    ) -> ForwardCache {
        let mut acts = Vec::with_capacity(self.plans.len() + 1);
        let mut aux = Vec::with_capacity(self.plans.len());
        acts.push(input);
        for plan in &self.plans {
            let x = acts.last().expect("input pushed above");
            let (out, extra) = match &plan.spec {
                LayerSpec::Dense { activation, .. } => {
                    let out = self.affine(plan, x, rows, *activation);
                    (out, None)
                }
                LayerSpec::Conv2d {
                    activation,
                    padding,
                    ..
                } => {
                    let cols = im2col(plan, *padding, x, rows);
                    let patches = cols.len() / plan.cols;
                    let out = self.affine(plan, &cols, patches, *activation);
                    (out, Some(cols))
                }
                LayerSpec::Flatten => (x.clone(), None),
                LayerSpec::Dropout { rate } => match &mut mode {
                    Mode::Train(rng) if *rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.uniform() < *rate { 0.0 } else { keep })
                            .collect();
                        let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        (out, Some(mask))
                    }
                    _ => (x.clone(), None),
                },
            };
            acts.push(out);
            aux.push(extra);
        }
        ForwardCache {
            batch: rows,
            acts,
            aux,
        }
    }

    /// `rows x cols` input times the layer's weight matrix, plus bias and activation.
    fn affine(&self, plan: &LayerPlan, x: &[f64], rows: usize, activation: Activation) -> Vec<f64> {
        let w = &self.params[plan.weights..plan.bias];
        let b = &self.params[plan.bias..plan.weights + plan.param_len()];
        let mut out = vec![0.0; rows * plan.rows];
        gemm(
            rows, plan.cols, plan.rows, 1.0, x, false, w, true, 0.0, &mut out,
        );
        add_bias_rows(&mut out, b);
        match activation {
            Activation::None => {}
            Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => softmax_rows(&mut out, plan.rows),
        }
        out
    }

    /// Reverse pass.
    ///
    /// `d_out` is the gradient with respect to the network output, except
    /// when the last activation is softmax: then it is the gradient with
    /// respect to the pre-softmax logits. Parameter gradients are added into
    /// `grads`; the gradient with respect to the input is returned.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        assert_eq!(d_out.len(), cache.output().len(), "output gradient size");
        let rows = cache.batch;
        let mut d = d_out.to_vec();
        for (i, plan) in self.plans.iter().enumerate().rev() {
            let out = &cache.acts[i + 1];
            match &plan.spec {
                LayerSpec::Dense { activation, .. } => {
                    relu_backward(*activation, out, &mut d);
                    d = self.affine_backward(plan, &cache.acts[i], rows, &d, grads);
                }
                LayerSpec::Conv2d {
                    activation,
                    padding,
                    ..
                } => {
                    relu_backward(*activation, out, &mut d);
                    let cols = cache.aux[i].as_ref().expect("conv caches its patches");
                    let patches = cols.len() / plan.cols;
                    let d_cols = self.affine_backward(plan, cols, patches, &d, grads);
                    d = col2im(plan, *padding, &d_cols, rows);
                }
                LayerSpec::Flatten => {}
                LayerSpec::Dropout { .. } => {
                    if let Some(mask) = &cache.aux[i] {
                        d.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    }
                }
            }
        }
        d
    }

    fn affine_backward(
        &self,
        plan: &LayerPlan,
        x: &[f64],
        rows: usize,
        d: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let (gw, gb) = grads[plan.weights..plan.weights + plan.param_len()]
            .split_at_mut(plan.rows * plan.cols);
        gemm(plan.rows, rows, plan.cols, 1.0, d, true, x, false, 1.0, gw);
        add_column_sums(d, gb);
        let w = &self.params[plan.weights..plan.bias];
        let mut dx = vec![0.0; rows * plan.cols];
        gemm(
            rows, plan.rows, plan.cols, 1.0, d, false, w, false, 0.0, &mut dx,
        );
        dx
    }

    fn require_softmax(&self) -> Result<()> {
        if self.ends_in_softmax() {
            Ok(())
        } else {
            Err(Error::Config(
                "loss gradients need a softmax output layer".into(),
            ))
        }
    }

    /// Mean cross-entropy over the batch and its exact gradient with respect
    /// to every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        labels: &[usize],
        mode: Mode<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        self.require_softmax()?;
        let cache = self.forward_cached(batch, mode)?;
        let probs = cache.output();
        let loss = cross_entropy(probs, self.output_len(), labels)?;
        let d = softmax_ce_grad(probs, self.output_len(), labels, 1.0 / cache.batch as f64);
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&cache, &d, &mut grads);
        Ok((loss, grads))
    }

    /// Gradient of each sample's own cross-entropy with respect to its input
    /// components, with dropout disabled. Shaped like `x`.
    pub fn input_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        self.require_softmax()?;
        let cache = self.forward_cached(x, Mode::Eval)?;
        let probs = cache.output();
        if labels.len() != cache.batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                cache.batch
            )));
        }
        let d = softmax_ce_grad(probs, self.output_len(), labels, 1.0);
        let mut scratch = vec![0.0; self.params.len()];
        let dx = self.backward(&cache, &d, &mut scratch);
        Tensor::new(x.shape().to_vec(), dx)
    }
}

fn relu_backward(activation: Activation, out: &[f64], d: &mut [f64]) {
    if activation == Activation::Relu {
        d.iter_mut().zip(out).for_each(|(g, &o)| {
            if o <= 0.0 {
                *g = 0.0
            }
        });
    }
}

/// For every output position and patch element, the source index inside one
/// sample, or `None` where the patch reads padding.
fn patch_sources(plan: &LayerPlan, padding: Padding) -> Vec<Option<usize>> {
    let (_, w, c, out_h, out_w) = plan.conv_geometry();
    let (kh, kw) = match plan.spec {
        LayerSpec::Conv2d {
            kernel_h, kernel_w, ..
        } => (kernel_h, kernel_w),
        _ => unreachable!("patch_sources on a non-convolution layer"),
    };
    let shift = match padding {
        Padding::Valid => 0,
        Padding::Full => kw - 1,
    };
    let mut sources = Vec::with_capacity(out_h * out_w * plan.cols);
    for oh in 0..out_h {
        for ow in 0..out_w {
            for i in 0..kh {
                for j in 0..kw {
                    let col = (ow + j).checked_sub(shift).filter(|&col| col < w);
                    for ch in 0..c {
                        sources.push(col.map(|col| ((oh + i) * w + col) * c + ch));
                    }
                }
            }
        }
    }
    sources
}

fn im2col(plan: &LayerPlan, padding: Padding, x: &[f64], rows: usize) -> Vec<f64> {
    let sources = patch_sources(plan, padding);
    let in_len = plan.in_len();
    let mut cols = Vec::with_capacity(rows * sources.len());
    for sample in x.chunks_exact(in_len).take(rows) {
        cols.extend(sources.iter().map(|s| s.map_or(0.0, |idx| sample[idx])));
    }
    cols
}

fn col2im(plan: &LayerPlan, padding: Padding, d_cols: &[f64], rows: usize) -> Vec<f64> {
    let sources = patch_sources(plan, padding);
    let in_len = plan.in_len();
    let mut dx = vec![0.0; rows * in_len];
    for (sample, dc) in dx
        .chunks_exact_mut(in_len)
        .zip(d_cols.chunks_exact(sources.len()))
    {
        for (s, g) in sources.iter().zip(dc) {
            if let Some(idx) = s {
                sample[*idx] += g;
            }
        }
    }
    dx
}

/// Single-sample convolution: `input` is `(h, w)` or `(h, w, c)`, `weights`
/// is `(filters, kh, kw, c)`. Returns `(out_h, out_w, filters)`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    padding: Padding,
    activation: Activation,
) -> Result<Tensor> {
    let (filters, kernel_h, kernel_w) = match weights.shape() {
        [f, kh, kw] | [f, kh, kw, _] => (*f, *kh, *kw),
        other => {
            return Err(Error::Shape(format!(
                "convolution weights must be (filters, kh, kw[, c]), got {other:?}"
            )))
        }
    };
    if bias.len() != filters {
        return Err(Error::Shape(format!(
            "{} biases for {filters} filters",
            bias.len()
        )));
    }
    let spec = LayerSpec::Conv2d {
        filters,
        kernel_h,
        kernel_w,
        activation,
        padding,
    };
    let mut net = init_network(&[spec], input.shape(), 0)?;
    if net.weights_mut(0).len() != weights.len() {
        return Err(Error::Shape(
            "weight tensor does not match input channels".into(),
        ));
    }
    net.weights_mut(0).copy_from_slice(weights.data());
    net.bias_mut(0).copy_from_slice(bias);
    let mut batch_shape = vec![1];
    batch_shape.extend_from_slice(input.shape());
    let batch = Tensor::new(batch_shape, input.data().to_vec())?;
    let out = net.predict(&batch)?;
    Tensor::new(net.output_shape().to_vec(), out.into_data())
}
