//! Network IR: an ordered list of layers with shape checking, GEMM reshaping
//! of quantizable layers, and MAC counting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::ConvGeometry;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        if weight.dims().len() != 2 {
            return Err(Error::Shape(format!(
                "dense weight must be rank 2, got {:?}",
                weight.dims()
            )));
        }
        check_bias(&bias, weight.dims()[0])?;
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_ch, in_ch, k, k]`
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Option<Vec<f64>>, stride: usize, pad: usize) -> Result<Self> {
        let d = weight.dims();
        if d.len() != 4 || d[2] != d[3] {
            return Err(Error::Shape(format!(
                "conv weight must be [out, in, k, k], got {d:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv stride must be positive".into()));
        }
        check_bias(&bias, d[0])?;
        Ok(Self {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn geometry(&self, input: &[usize]) -> Result<ConvGeometry> {
        if input.len() != 3 || input[0] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects [{}, h, w], got {input:?}",
                self.in_channels()
            )));
        }
        ConvGeometry::new(input[0], input[1], input[2], self.kernel(), self.stride, self.pad)
            .ok_or_else(|| Error::Shape(format!("kernel does not fit input {input:?}")))
    }
}

fn check_bias(bias: &Option<Vec<f64>>, out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != out {
            return Err(Error::Shape(format!(
                "bias length {} does not match {out} outputs",
                b.len()
            )));
        }
        if let Some(index) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2x2,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Flatten => "flatten",
        }
    }

    pub fn is_quantizable(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense(d) => Some(&d.weight),
            Layer::Conv2d(c) => Some(&c.weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense(d) => Some(&mut d.weight),
            Layer::Conv2d(c) => Some(&mut c.weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&[f64]> {
        match self {
            Layer::Dense(d) => d.bias.as_deref(),
            Layer::Conv2d(c) => c.bias.as_deref(),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => d.bias.as_mut(),
            Layer::Conv2d(c) => c.bias.as_mut(),
            _ => None,
        }
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.in_features()] {
                    return Err(Error::Shape(format!(
                        "dense expects [{}], got {input:?}",
                        d.in_features()
                    )));
                }
                Ok(vec![d.out_features()])
            }
            Layer::Conv2d(c) => {
                let g = c.geometry(input)?;
                Ok(vec![c.out_channels(), g.out_h, g.out_w])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2x2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(Error::Shape(format!("maxpool2x2 expects [c, h>=2, w>=2], got {input:?}")));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Multiply-accumulate count for one sample.
    pub fn macs(&self, input: &[usize]) -> Result<u64> {
        match self {
            Layer::Dense(d) => {
                self.output_dims(input)?;
                Ok((d.in_features() * d.out_features()) as u64)
            }
            Layer::Conv2d(c) => {
                let g = c.geometry(input)?;
                let k = c.kernel();
                Ok((g.out_h * g.out_w * c.out_channels() * c.in_channels() * k * k) as u64)
            }
            _ => {
                self.output_dims(input)?;
                Ok(0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkIR {
    input_dims: Vec<usize>,
    layers: Vec<Layer>,
}

impl NetworkIR {
    pub fn new(input_dims: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_dims.is_empty() || input_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDims(input_dims));
        }
        let mut dims = input_dims.clone();
        for layer in &layers {
            dims = layer.output_dims(&dims)?;
        }
        Ok(Self { input_dims, layers })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.layer_input_dims().pop().unwrap_or_default()
    }

    /// Input dims of every layer, followed by the network output dims.
    pub fn layer_input_dims(&self) -> Vec<Vec<usize>> {
        let mut all = vec![self.input_dims.clone()];
        for layer in &self.layers {
            let next = layer
                .output_dims(all.last().unwrap())
                .expect("shapes validated at construction");
            all.push(next);
        }
        all
    }

    pub fn quantizable_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_quantizable())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.output_dims().iter().product()
    }

    /// Replace a quantizable layer's weights from a GEMM matrix of matching shape.
    pub fn set_weight_matrix(&mut self, index: usize, matrix: &WeightMatrix) -> Result<()> {
        let layer = self
            .layers
            .get_mut(index)
            .ok_or_else(|| Error::Shape(format!("no layer {index}")))?;
        let kind = layer.kind();
        let weight = layer
            .weight_mut()
            .ok_or_else(|| Error::NotQuantizable(kind.into()))?;
        *weight = matrix.to_tensor(weight.dims())?;
        Ok(())
    }
}

/// Row-major `[rows, cols]` view of a layer's weights: one row per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDims(vec![rows, cols]));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Inverse of [`reshape_to_gemm`] for a weight tensor with the given dims.
    pub fn to_tensor(&self, dims: &[usize]) -> Result<Tensor> {
        if dims.first() != Some(&self.rows) || dims[1..].iter().product::<usize>() != self.cols {
            return Err(Error::Shape(format!(
                "cannot restore {}x{} matrix into {dims:?}",
                self.rows, self.cols
            )));
        }
        Tensor::new(dims.to_vec(), self.data.clone())
    }
}

/// Conv `O x I x k x k` becomes `O x (I*k*k)` with columns ordered (in_ch, k_row, k_col);
/// dense `[out, in]` is returned unchanged.
pub fn reshape_to_gemm(layer: &Layer) -> Result<WeightMatrix> {
    let w = layer
        .weight()
        .ok_or_else(|| Error::NotQuantizable(layer.kind().into()))?;
    let rows = w.dims()[0];
    let cols = w.dims()[1..].iter().product();
    WeightMatrix::new(rows, cols, w.data().to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpCount {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

pub fn count_ops(net: &NetworkIR, input_dims: &[usize]) -> Result<OpCount> {
    count_layer_ops(net.layers(), input_dims)
}

pub fn count_layer_ops(layers: &[Layer], input_dims: &[usize]) -> Result<OpCount> {
    let mut dims = input_dims.to_vec();
    let mut per_layer = Vec::with_capacity(layers.len());
    for layer in layers {
        per_layer.push(layer.macs(&dims)?);
        dims = layer.output_dims(&dims)?;
    }
    let total = per_layer.iter().sum();
    Ok(OpCount { per_layer, total })
}

/// Builder with He-uniform initialization from a seeded ChaCha stream.
pub struct NetworkBuilder {
    input_dims: Vec<usize>,
    dims: Vec<usize>,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(input_dims: &[usize], seed: u64) -> Self {
        Self {
            input_dims: input_dims.to_vec(),
            dims: input_dims.to_vec(),
            layers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            error: None,
        }
    }

    fn push(mut self, layer: Layer) -> Self {
        if self.error.is_some() {
            return self;
        }
        match layer.output_dims(&self.dims) {
            Ok(d) => {
                self.dims = d;
                self.layers.push(layer);
            }
            Err(e) => self.error = Some(e),
        }
        self
    }

    fn uniform(&mut self, n: usize, fan_in: usize) -> Vec<f64> {
        let bound = (6.0 / fan_in as f64).sqrt();
        (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
    }

    pub fn dense(mut self, out: usize) -> Self {
        let fan_in = self.dims.iter().product::<usize>();
        let w = self.uniform(out * fan_in, fan_in);
        match Tensor::new(vec![out, fan_in], w).and_then(|t| Dense::new(t, Some(vec![0.0; out]))) {
            Ok(d) => self.push(Layer::Dense(d)),
            Err(e) => {
                self.error.get_or_insert(e);
                self
            }
        }
    }

    pub fn conv(mut self, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let in_ch = self.dims.first().copied().unwrap_or(0);
        let fan_in = in_ch * kernel * kernel;
        let w = self.uniform(out_ch * fan_in, fan_in.max(1));
        match Tensor::new(vec![out_ch, in_ch, kernel, kernel], w)
            .and_then(|t| Conv2d::new(t, Some(vec![0.0; out_ch]), stride, pad))
        {
            Ok(c) => self.push(Layer::Conv2d(c)),
            Err(e) => {
                self.error.get_or_insert(e);
                self
            }
        }
    }

    pub fn relu(self) -> Self {
        self.push(Layer::Relu)
    }

    pub fn maxpool(self) -> Self {
        self.push(Layer::MaxPool2x2)
    }

    pub fn flatten(self) -> Self {
        self.push(Layer::Flatten)
    }

    pub fn build(self) -> Result<NetworkIR> {
        if let Some(e) = self.error {
            return Err(e);
        }
        NetworkIR::new(self.input_dims, self.layers)
    }
}

/// Fully connected ReLU network, e.g. `&[2, 16, 16, 2]`.
pub fn mlp(widths: &[usize], seed: u64) -> Result<NetworkIR> {
    if widths.len() < 2 {
        return Err(Error::Config("an MLP needs at least input and output widths".into()));
    }
    let mut b = NetworkBuilder::new(&widths[..1], seed);
    for (i, &w) in widths[1..].iter().enumerate() {
        b = b.dense(w);
        if i + 2 < widths.len() {
            b = b.relu();
        }
    }
    b.build()
}
