use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{Layout, Segment};
use crate::error::{Error, Result};
use crate::image::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Stride-1 convolution with zero padding.
    Conv { filters: usize, kernel: usize, padding: usize },
    Relu,
    /// 2×2 max pooling, stride 2 (odd trailing rows/columns are dropped).
    MaxPool2,
    /// Fully connected layer over the flattened CHW activation.
    Dense { units: usize },
}

/// Activation shape in CHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A layer with resolved input/output shapes and parameter offsets.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerPlan {
    pub spec: LayerSpec,
    pub input: Dims,
    pub output: Dims,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    input: Shape,
    layers: Vec<LayerSpec>,
    plan: Vec<LayerPlan>,
    layout: Arc<Layout>,
    classes: usize,
}

impl Architecture {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::InvalidArgument("empty input shape".into()));
        }
        let mut dims = Dims {
            c: input.channels,
            h: input.height,
            w: input.width,
        };
        let mut plan = Vec::with_capacity(layers.len());
        let mut segments = Vec::new();
        let mut offset = 0;
        for (i, &spec) in layers.iter().enumerate() {
            let (output, weight_dims, bias_len) = match spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    padding,
                } => {
                    if filters == 0 || kernel == 0 || dims.h + 2 * padding < kernel || dims.w + 2 * padding < kernel {
                        return Err(Error::InvalidArgument(format!("layer {i}: conv does not fit {dims:?}")));
                    }
                    let out = Dims {
                        c: filters,
                        h: dims.h + 2 * padding - kernel + 1,
                        w: dims.w + 2 * padding - kernel + 1,
                    };
                    (out, vec![filters, dims.c, kernel, kernel], filters)
                }
                LayerSpec::Relu => (dims, vec![], 0),
                LayerSpec::MaxPool2 => {
                    if dims.h < 2 || dims.w < 2 {
                        return Err(Error::InvalidArgument(format!("layer {i}: cannot pool {dims:?}")));
                    }
                    (
                        Dims {
                            c: dims.c,
                            h: dims.h / 2,
                            w: dims.w / 2,
                        },
                        vec![],
                        0,
                    )
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::InvalidArgument(format!("layer {i}: dense with zero units")));
                    }
                    (Dims { c: units, h: 1, w: 1 }, vec![units, dims.len()], units)
                }
            };
            let weight_offset = offset;
            if !weight_dims.is_empty() {
                let len: usize = weight_dims.iter().product();
                segments.push(Segment::new(format!("layer{i}.weight"), weight_dims, offset));
                offset += len;
                segments.push(Segment::new(format!("layer{i}.bias"), vec![bias_len], offset));
                offset += bias_len;
            }
            plan.push(LayerPlan {
                spec,
                input: dims,
                output,
                weight_offset,
                bias_offset: weight_offset + output_weight_len(&spec, dims),
            });
            dims = output;
        }
        match layers.last() {
            Some(LayerSpec::Dense { units }) => {
                if *units < 2 {
                    return Err(Error::InvalidArgument("classifier needs at least two classes".into()));
                }
            }
            _ => return Err(Error::InvalidArgument("architecture must end in a dense layer".into())),
        }
        let mut arch = Architecture {
            input,
            classes: dims.c,
            layers,
            plan,
            layout: Arc::new(Layout::new(String::new(), segments)),
        };
        arch.layout = Arc::new(Layout::new(arch.descriptor(), arch.layout.segments().to_vec()));
        Ok(arch)
    }

    /// Two 3×3 conv blocks (conv, relu, 2×2 pool) followed by a linear classifier.
    pub fn small_cnn(input: Shape, classes: usize, conv1: usize, conv2: usize) -> Result<Self> {
        Architecture::new(
            input,
            vec![
                LayerSpec::Conv {
                    filters: conv1,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv {
                    filters: conv2,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Dense { units: classes },
            ],
        )
    }

    pub fn mlp(input: Shape, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        for &units in hidden {
            layers.push(LayerSpec::Dense { units });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: classes });
        Architecture::new(input, layers)
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub(crate) fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    /// One-line text form, e.g. `input 16 16 1 | conv 8 3 1 | relu | maxpool2 | dense 10`.
    pub fn descriptor(&self) -> String {
        let mut parts = vec![format!(
            "input {} {} {}",
            self.input.height, self.input.width, self.input.channels
        )];
        parts.extend(self.layers.iter().map(|l| match l {
            LayerSpec::Conv {
                filters,
                kernel,
                padding,
            } => format!("conv {filters} {kernel} {padding}"),
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::MaxPool2 => "maxpool2".to_string(),
            LayerSpec::Dense { units } => format!("dense {units}"),
        }));
        parts.join(" | ")
    }

    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let bad = |part: &str| Error::InvalidArgument(format!("bad architecture token `{part}`"));
        let mut input = None;
        let mut layers = Vec::new();
        for part in text.split('|').map(str::trim) {
            let mut words = part.split_whitespace();
            let head = words.next().ok_or_else(|| bad(part))?;
            let nums = words
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(part))?;
            match (head, nums.as_slice()) {
                ("input", &[h, w, c]) if input.is_none() => input = Some(Shape::new(h, w, c)),
                ("conv", &[filters, kernel, padding]) => layers.push(LayerSpec::Conv {
                    filters,
                    kernel,
                    padding,
                }),
                ("relu", &[]) => layers.push(LayerSpec::Relu),
                ("maxpool2", &[]) => layers.push(LayerSpec::MaxPool2),
                ("dense", &[units]) => layers.push(LayerSpec::Dense { units }),
                _ => return Err(bad(part)),
            }
        }
        Architecture::new(input.ok_or_else(|| bad(text))?, layers)
    }
}

fn output_weight_len(spec: &LayerSpec, input: Dims) -> usize {
    match *spec {
        LayerSpec::Conv { filters, kernel, .. } => filters * input.c * kernel * kernel,
        LayerSpec::Dense { units } => units * input.len(),
        LayerSpec::Relu | LayerSpec::MaxPool2 => 0,
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}
