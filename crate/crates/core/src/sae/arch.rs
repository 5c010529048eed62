//! Architecture descriptors and shape inference.

use serde::{Deserialize, Serialize};

use super::SaeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    /// Stride 1 uses 'same' padding; larger strides use no padding.
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    Flatten,
}

/// Activation shape of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    /// Height x width x channels, channels fastest.
    Grid { h: usize, w: usize, c: usize },
    /// Three binned axes (an E–t–dt cube), not usable by convolutions.
    Volume(usize, usize, usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Grid { h, w, c } => h * w * c,
            Shape::Volume(a, b, c) => a * b * c,
        }
    }

    /// Channel count seen by batch normalization.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Grid { c, .. } => c,
            other => other.size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    /// `[n_tau, n_eps]` for maps or `[n_tau, n_eps, n_dtau]` for cubes.
    pub input_dims: Vec<usize>,
    /// Encoder layers; the last must be `Dense { units: bottleneck_dim }`.
    pub layers: Vec<LayerSpec>,
    pub bottleneck_dim: usize,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_momentum")]
    pub batchnorm_momentum: f64,
    /// Batch normalization after every hidden layer of encoder and decoder.
    #[serde(default = "default_true")]
    pub batchnorm: bool,
}

fn default_leaky_slope() -> f64 {
    0.01
}

fn default_momentum() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

/// One parametric layer after shape inference, in encoder or decoder order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannedLayer {
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Conv {
        input: Shape,
        output: Shape,
        kernel: (usize, usize),
        stride: usize,
        pad: (usize, usize),
    },
    /// Transposed convolution mirroring a strided `Conv` (input/output swapped).
    ConvTranspose {
        input: Shape,
        output: Shape,
        kernel: (usize, usize),
        stride: usize,
        pad: (usize, usize),
    },
}

impl PlannedLayer {
    pub fn output(&self) -> Shape {
        match *self {
            PlannedLayer::Dense { n_out, .. } => Shape::Flat(n_out),
            PlannedLayer::Conv { output, .. } | PlannedLayer::ConvTranspose { output, .. } => output,
        }
    }

    pub fn input(&self) -> Shape {
        match *self {
            PlannedLayer::Dense { n_in, .. } => Shape::Flat(n_in),
            PlannedLayer::Conv { input, .. } | PlannedLayer::ConvTranspose { input, .. } => input,
        }
    }

    /// Weight and bias element counts.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            PlannedLayer::Dense { n_in, n_out } => (n_in * n_out, n_out),
            PlannedLayer::Conv { input, output, kernel, .. } => {
                let (ci, co) = (input.channels(), output.channels());
                (kernel.0 * kernel.1 * ci * co, co)
            }
            PlannedLayer::ConvTranspose { input, output, kernel, .. } => {
                let (ci, co) = (input.channels(), output.channels());
                (ci * kernel.0 * kernel.1 * co, co)
            }
        }
    }

    fn mirror(&self) -> PlannedLayer {
        match *self {
            PlannedLayer::Dense { n_in, n_out } => PlannedLayer::Dense { n_in: n_out, n_out: n_in },
            PlannedLayer::Conv {
                input,
                output,
                kernel,
                stride,
                pad,
            } => {
                if stride == 1 {
                    PlannedLayer::Conv {
                        input: output,
                        output: input,
                        kernel,
                        stride,
                        pad,
                    }
                } else {
                    PlannedLayer::ConvTranspose {
                        input: output,
                        output: input,
                        kernel,
                        stride,
                        pad,
                    }
                }
            }
            PlannedLayer::ConvTranspose { .. } => unreachable!("encoders contain no transposed convolutions"),
        }
    }
}

/// Result of shape inference: the encoder's parametric layers and the mirrored decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub input: Shape,
    pub encoder: Vec<PlannedLayer>,
    pub decoder: Vec<PlannedLayer>,
    /// Activation shape after every encoder layer spec, flatten included.
    pub encoder_shapes: Vec<Shape>,
}

impl Plan {
    /// Weight plus bias elements of the encoder's dense and conv layers.
    pub fn encoder_linear_params(&self) -> usize {
        self.encoder
            .iter()
            .map(|l| {
                let (w, b) = l.param_counts();
                w + b
            })
            .sum()
    }
}

impl ArchSpec {
    /// Fully connected encoder for E–t–dt cubes: flatten, then 1536, 384, 92 and
    /// a 24-unit bottleneck at the default 24x16x16 resolution.
    pub fn cube_dense(input_dims: [usize; 3], bottleneck_dim: usize) -> Self {
        ArchSpec {
            input_dims: input_dims.to_vec(),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1536 },
                LayerSpec::Dense { units: 384 },
                LayerSpec::Dense { units: 92 },
                LayerSpec::Dense { units: bottleneck_dim },
            ],
            bottleneck_dim,
            leaky_slope: default_leaky_slope(),
            batchnorm_momentum: default_momentum(),
            batchnorm: true,
        }
    }

    pub fn standard_cube() -> Self {
        Self::cube_dense([24, 16, 16], 24)
    }

    /// Convolutional encoder for E–t maps with a 12-unit bottleneck.
    pub fn map_conv(input_dims: [usize; 2], bottleneck_dim: usize) -> Self {
        ArchSpec {
            input_dims: input_dims.to_vec(),
            layers: vec![
                LayerSpec::Conv2d {
                    filters: 32,
                    kernel: (3, 3),
                    stride: 1,
                },
                LayerSpec::Conv2d {
                    filters: 32,
                    kernel: (2, 2),
                    stride: 2,
                },
                LayerSpec::Conv2d {
                    filters: 16,
                    kernel: (3, 3),
                    stride: 1,
                },
                LayerSpec::Conv2d {
                    filters: 16,
                    kernel: (2, 2),
                    stride: 2,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 192 },
                LayerSpec::Dense { units: 48 },
                LayerSpec::Dense { units: bottleneck_dim },
            ],
            bottleneck_dim,
            leaky_slope: default_leaky_slope(),
            batchnorm_momentum: default_momentum(),
            batchnorm: true,
        }
    }

    pub fn standard_map() -> Self {
        Self::map_conv([24, 16], 12)
    }

    pub fn input_shape(&self) -> Result<Shape, SaeError> {
        match *self.input_dims.as_slice() {
            [h, w] if h > 0 && w > 0 => Ok(Shape::Grid { h, w, c: 1 }),
            [a, b, c] if a > 0 && b > 0 && c > 0 => Ok(Shape::Volume(a, b, c)),
            _ => Err(SaeError::ShapeInferenceFailure(format!(
                "input dims {:?} must be two or three positive sizes",
                self.input_dims
            ))),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_dims.iter().product()
    }

    pub fn plan(&self) -> Result<Plan, SaeError> {
        let fail = |msg: String| Err(SaeError::ShapeInferenceFailure(msg));
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.batchnorm_momentum) {
            return fail(format!("batchnorm momentum {} outside [0, 1)", self.batchnorm_momentum));
        }
        let input = self.input_shape()?;
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.bottleneck_dim && *units > 0 => {}
            _ => return fail(format!("last layer must be dense({})", self.bottleneck_dim)),
        }
        let mut shape = input;
        let mut encoder = Vec::new();
        let mut encoder_shapes = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Flatten => shape = Shape::Flat(shape.size()),
                LayerSpec::Dense { units } => {
                    let Shape::Flat(n_in) = shape else {
                        return fail(format!("layer {i}: dense layer needs a flattened input, got {shape:?}"));
                    };
                    if units == 0 {
                        return fail(format!("layer {i}: dense layer with zero units"));
                    }
                    let planned = PlannedLayer::Dense { n_in, n_out: units };
                    shape = planned.output();
                    encoder.push(planned);
                }
                LayerSpec::Conv2d { filters, kernel, stride } => {
                    let Shape::Grid { h, w, .. } = shape else {
                        return fail(format!("layer {i}: convolution needs a 2D grid input, got {shape:?}"));
                    };
                    if filters == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
                        return fail(format!("layer {i}: degenerate convolution"));
                    }
                    let (oh, ow, pad) = if stride == 1 {
                        (h, w, ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2))
                    } else {
                        if kernel.0 > h || kernel.1 > w {
                            return fail(format!("layer {i}: kernel {kernel:?} larger than {h}x{w}"));
                        }
                        ((h - kernel.0) / stride + 1, (w - kernel.1) / stride + 1, (0, 0))
                    };
                    let planned = PlannedLayer::Conv {
                        input: shape,
                        output: Shape::Grid {
                            h: oh,
                            w: ow,
                            c: filters,
                        },
                        kernel,
                        stride,
                        pad,
                    };
                    shape = planned.output();
                    encoder.push(planned);
                }
            }
            encoder_shapes.push(shape);
        }
        let decoder = encoder.iter().rev().map(PlannedLayer::mirror).collect();
        Ok(Plan {
            input,
            encoder,
            decoder,
            encoder_shapes,
        })
    }
}
