//! Per-sample forward and backward passes with optional STE activation quantizers.

use crate::error::{Error, Result};
use crate::network::{Layer, NetworkIR};
use crate::ops::{argmax, col2im, im2col, matmul, maxpool2x2};
use crate::train::ActivationQuantizer;

/// Quantizer applied to the input of each layer (indexed like `net.layers()`).
pub type LayerQuantizers = [Option<ActivationQuantizer>];

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    dims: Vec<Vec<usize>>,
    /// Input consumed by each layer, after activation quantization.
    inputs: Vec<Vec<f64>>,
    /// STE masks of quantized layer inputs.
    masks: Vec<Option<Vec<f64>>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    pub output: Vec<f64>,
}

impl Trace {
    pub fn layer_input(&self, index: usize) -> &[f64] {
        &self.inputs[index]
    }
}

/// Weight and bias gradients, one slot per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Option<Vec<f64>>>,
    pub biases: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros(net: &NetworkIR) -> Self {
        let weights = net
            .layers()
            .iter()
            .map(|l| l.weight().map(|w| vec![0.0; w.len()]))
            .collect();
        let biases = net
            .layers()
            .iter()
            .map(|l| l.bias().map(|b| vec![0.0; b.len()]))
            .collect();
        Self { weights, biases }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
}

fn check_quantizers(net: &NetworkIR, q: &LayerQuantizers) -> Result<()> {
    if q.len() != net.layers().len() {
        return Err(Error::Shape(format!(
            "{} activation quantizer slots for {} layers",
            q.len(),
            net.layers().len()
        )));
    }
    Ok(())
}

pub fn forward_trace(net: &NetworkIR, quantizers: &LayerQuantizers, x: &[f64]) -> Result<Trace> {
    check_quantizers(net, quantizers)?;
    let dims = net.layer_input_dims();
    if x.len() != dims[0].iter().product::<usize>() {
        return Err(Error::Shape(format!(
            "sample has {} values, network expects {:?}",
            x.len(),
            dims[0]
        )));
    }
    let n = net.layers().len();
    let mut inputs = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut pool_argmax = Vec::with_capacity(n);
    let mut cur = x.to_vec();
    for (i, layer) in net.layers().iter().enumerate() {
        match &quantizers[i] {
            Some(q) => {
                masks.push(Some(cur.iter().map(|&a| q.grad_mask(a)).collect()));
                cur.iter_mut().for_each(|a| *a = q.quantize(*a));
            }
            None => masks.push(None),
        }
        let mut argmax_idx = None;
        let next = match layer {
            Layer::Dense(d) => {
                let mut y = matmul(d.weight.data(), &cur, d.out_features(), d.in_features(), 1);
                add_bias(&mut y, layer.bias(), 1);
                y
            }
            Layer::Conv2d(c) => {
                let g = c.geometry(&dims[i])?;
                let cols = im2col(&cur, &g);
                let mut y = matmul(c.weight.data(), &cols, c.out_channels(), g.col_rows(), g.col_cols());
                add_bias(&mut y, layer.bias(), g.col_cols());
                y
            }
            Layer::Relu => cur.iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool2x2 => {
                let d = &dims[i];
                let (y, idx) = maxpool2x2(&cur, d[0], d[1], d[2]);
                argmax_idx = Some(idx);
                y
            }
            Layer::Flatten => cur.clone(),
        };
        pool_argmax.push(argmax_idx);
        inputs.push(std::mem::replace(&mut cur, next));
    }
    Ok(Trace {
        dims,
        inputs,
        masks,
        pool_argmax,
        output: cur,
    })
}

pub fn forward(net: &NetworkIR, quantizers: &LayerQuantizers, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(net, quantizers, x)?.output)
}

fn add_bias(y: &mut [f64], bias: Option<&[f64]>, per_row: usize) {
    if let Some(b) = bias {
        for (row, &bv) in y.chunks_exact_mut(per_row).zip(b) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the network input.
pub fn backward(net: &NetworkIR, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
    if grad_out.len() != trace.output.len() {
        return Err(Error::Shape("output gradient does not match forward output".into()));
    }
    let mut g = grad_out.to_vec();
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let x = &trace.inputs[i];
        let mut dx = match layer {
            Layer::Dense(d) => {
                let (out, inp) = (d.out_features(), d.in_features());
                if let Some(gw) = grads.weights[i].as_mut() {
                    for r in 0..out {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (w, &xv) in gw[r * inp..(r + 1) * inp].iter_mut().zip(x) {
                                *w += gr * xv;
                            }
                        }
                    }
                }
                if let Some(gb) = grads.biases[i].as_mut() {
                    gb.iter_mut().zip(&g).for_each(|(b, &v)| *b += v);
                }
                let w = d.weight.data();
                let mut dx = vec![0.0; inp];
                for r in 0..out {
                    let gr = g[r];
                    if gr != 0.0 {
                        for (dv, &wv) in dx.iter_mut().zip(&w[r * inp..(r + 1) * inp]) {
                            *dv += gr * wv;
                        }
                    }
                }
                dx
            }
            Layer::Conv2d(c) => {
                let geo = c.geometry(&trace.dims[i])?;
                let (k, n, out) = (geo.col_rows(), geo.col_cols(), c.out_channels());
                let cols = im2col(x, &geo);
                if let Some(gw) = grads.weights[i].as_mut() {
                    for r in 0..out {
                        let grow = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            let crow = &cols[kk * n..(kk + 1) * n];
                            gw[r * k + kk] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = grads.biases[i].as_mut() {
                    for (r, b) in gb.iter_mut().enumerate() {
                        *b += g[r * n..(r + 1) * n].iter().sum::<f64>();
                    }
                }
                let w = c.weight.data();
                let mut dcols = vec![0.0; k * n];
                for r in 0..out {
                    let grow = &g[r * n..(r + 1) * n];
                    for kk in 0..k {
                        let wv = w[r * k + kk];
                        if wv != 0.0 {
                            for (d, &gv) in dcols[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
                col2im(&dcols, &geo)
            }
            Layer::Relu => g
                .iter()
                .zip(x)
                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                .collect(),
            Layer::MaxPool2x2 => {
                let idx = trace.pool_argmax[i].as_ref().expect("pool trace");
                let mut dx = vec![0.0; x.len()];
                for (&j, &gv) in idx.iter().zip(&g) {
                    dx[j] += gv;
                }
                dx
            }
            Layer::Flatten => g.clone(),
        };
        if let Some(mask) = &trace.masks[i] {
            dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        g = dx;
    }
    Ok(g)
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + m - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// `(accuracy, mean loss)` over a set of samples.
pub fn evaluate(net: &NetworkIR, quantizers: &LayerQuantizers, data: &crate::data::Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let out = forward(net, quantizers, data.sample(i))?;
        if argmax(&out) == data.label(i) {
            correct += 1;
        }
        loss += softmax_cross_entropy(&out, data.label(i)).0;
    }
    Ok((correct as f64 / data.len() as f64, loss / data.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkBuilder;

    fn loss_of(net: &NetworkIR, x: &[f64], label: usize) -> f64 {
        let q = vec![None; net.layers().len()];
        softmax_cross_entropy(&forward(net, &q, x).unwrap(), label).0
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn conv_net_gradients_match_finite_differences() {
        let net = NetworkBuilder::new(&[2, 6, 6], 3)
            .conv(3, 3, 1, 1)
            .relu()
            .maxpool()
            .conv(2, 2, 1, 0)
            .flatten()
            .dense(3)
            .build()
            .unwrap();
        let x: Vec<f64> = (0..72).map(|i| ((i * 37 % 19) as f64) / 19.0 - 0.3).collect();
        let q = vec![None; net.layers().len()];
        let trace = forward_trace(&net, &q, &x).unwrap();
        let (_, g) = softmax_cross_entropy(&trace.output, 1);
        let mut grads = Gradients::zeros(&net);
        let dx = backward(&net, &trace, &g, &mut grads).unwrap();
        let h = 1e-6;
        for li in net.quantizable_indices() {
            let gw = grads.weights[li].as_ref().unwrap();
            for j in (0..gw.len()).step_by(5) {
                let mut p = net.clone();
                p.layers_mut()[li].weight_mut().unwrap().data_mut()[j] += h;
                let mut m = net.clone();
                m.layers_mut()[li].weight_mut().unwrap().data_mut()[j] -= h;
                let fd = (loss_of(&p, &x, 1) - loss_of(&m, &x, 1)) / (2.0 * h);
                assert!(rel_err(fd, gw[j]) < 1e-5 || (fd - gw[j]).abs() < 1e-9, "layer {li} w{j}: {fd} vs {}", gw[j]);
            }
        }
        for j in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (loss_of(&net, &xp, 1) - loss_of(&net, &xm, 1)) / (2.0 * h);
            assert!(rel_err(fd, dx[j]) < 1e-5 || (fd - dx[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn ste_mask_blocks_clipped_inputs() {
        let net = NetworkBuilder::new(&[3], 1).dense(2).build().unwrap();
        let q = [Some(ActivationQuantizer::new(4, 1.0).unwrap())];
        let x = [-0.5, 0.4, 1.5];
        let trace = forward_trace(&net, &q, &x).unwrap();
        let mut grads = Gradients::zeros(&net);
        let dx = backward(&net, &trace, &[1.0, 1.0], &mut grads).unwrap();
        assert_eq!(dx[0], 0.0);
        assert_eq!(dx[2], 0.0);
        assert_ne!(dx[1], 0.0);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (l, g) = softmax_cross_entropy(&[1.0, 2.0, 0.5], 0);
        assert!(l > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }
}
