use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

/// Convolution padding along the sample (width) axis. The height axis is
/// always valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output width `w - k + 1`.
    Valid,
    /// Zero-padded by `k - 1` on both sides; output width `w + k - 1`.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected layer over the flattened input.
    Dense {
        units: usize,
        activation: Activation,
    },
    /// 2-D cross-correlation over an `(h, w, c)` input; a rank-2 input is
    /// read as a single channel.
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        activation: Activation,
        padding: Padding,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv2d { activation, .. } => {
                *activation
            }
            _ => Activation::None,
        }
    }
}

/// Resolved geometry of one layer inside a network.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerPlan {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Offset of the weight block in the flat parameter vector.
    pub weights: usize,
    /// Offset of the bias block, directly after the weights.
    pub bias: usize,
    /// Weight matrix is `rows x cols` (`out x in` for dense, `filters x patch` for conv).
    pub rows: usize,
    pub cols: usize,
}

impl LayerPlan {
    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn param_len(&self) -> usize {
        if self.rows == 0 {
            0
        } else {
            self.rows * self.cols + self.rows
        }
    }

    /// Spatial geometry `(h, w, c, out_h, out_w)` of a convolution.
    pub fn conv_geometry(&self) -> (usize, usize, usize, usize, usize) {
        let c = self.in_shape.get(2).copied().unwrap_or(1);
        (
            self.in_shape[0],
            self.in_shape[1],
            c,
            self.out_shape[0],
            self.out_shape[1],
        )
    }
}

/// Resolve shapes and parameter offsets for a layer stack.
pub(crate) fn plan_layers(specs: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<LayerPlan>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Config(format!(
            "invalid input shape {input_shape:?}"
        )));
    }
    let mut shape = input_shape.to_vec();
    let mut offset = 0;
    let mut plans = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        if spec.activation() == Activation::Softmax && i + 1 != specs.len() {
            return Err(Error::Config(format!(
                "layer {i}: softmax is only allowed as the final activation"
            )));
        }
        let in_len: usize = shape.iter().product();
        let (out_shape, rows, cols) = match spec {
            LayerSpec::Dense { units, .. } => {
                if *units == 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: dense layer with 0 units"
                    )));
                }
                (vec![*units], *units, in_len)
            }
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                padding,
                ..
            } => {
                if *filters == 0 || *kernel_h == 0 || *kernel_w == 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: convolution needs filters and kernel sizes >= 1"
                    )));
                }
                let (h, w, c) = match shape.as_slice() {
                    [h, w] => (*h, *w, 1),
                    [h, w, c] => (*h, *w, *c),
                    other => {
                        return Err(Error::Config(format!(
                            "layer {i}: convolution needs a rank-2 or rank-3 input, got {other:?}"
                        )))
                    }
                };
                if *kernel_h > h || (*padding == Padding::Valid && *kernel_w > w) {
                    return Err(Error::Config(format!(
                        "layer {i}: kernel ({kernel_h},{kernel_w}) does not fit input {shape:?}"
                    )));
                }
                let out_w = match padding {
                    Padding::Valid => w - kernel_w + 1,
                    Padding::Full => w + kernel_w - 1,
                };
                (
                    vec![h - kernel_h + 1, out_w, *filters],
                    *filters,
                    kernel_h * kernel_w * c,
                )
            }
            LayerSpec::Flatten => (vec![in_len], 0, 0),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::Config(format!(
                        "layer {i}: dropout rate {rate} outside [0, 1)"
                    )));
                }
                (shape.clone(), 0, 0)
            }
        };
        let weights = offset;
        let bias = offset + rows * cols;
        let plan = LayerPlan {
            spec: spec.clone(),
            in_shape: shape,
            out_shape: out_shape.clone(),
            weights,
            bias,
            rows,
            cols,
        };
        offset += plan.param_len();
        plans.push(plan);
        shape = out_shape;
    }
    Ok(plans)
}
