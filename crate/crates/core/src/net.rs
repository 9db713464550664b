//! Minimal feed-forward engine with hand-written backward passes.
//!
//! A network evaluates `h(x; w ∘ m)`: every weight matrix or convolution kernel is
//! multiplied element-wise by its mask segment before use. Biases are never masked.
//! One backward pass yields both `∂L/∂w` (mask held fixed) and `∂L/∂m` (weights
//! held fixed), since both are read off the gradient of the effective weight
//! `w ∘ m`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskSample;
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Linear {
        in_features: usize,
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    Flatten,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// One trainable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub layer: usize,
    pub fan_in: usize,
    /// Index of the mask segment gating this tensor; `None` for biases.
    pub mask_slot: Option<usize>,
}

impl ParamInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_maskable(&self) -> bool {
        self.mask_slot.is_some()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerParams {
    weight: usize,
    bias: Option<usize>,
}

/// Validated layer graph. Construction checks that adjacent layer dimensions line
/// up and that at least one maskable tensor exists.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    params: Vec<ParamInfo>,
}

impl NetSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "input shape must be non-empty with positive dims, got {input_shape:?}"
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        let mut params = Vec::new();
        let mut slots = 0;
        for (li, layer) in layers.iter().enumerate() {
            let cur = shapes.last().unwrap().clone();
            let next = match *layer {
                Layer::Linear {
                    in_features,
                    out_features,
                    bias,
                } => {
                    if in_features == 0 || out_features == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {li}: linear layer needs positive sizes (fan_in = {in_features})"
                        )));
                    }
                    if cur != [in_features] {
                        return Err(Error::InvalidSpec(format!(
                            "layer {li}: linear expects input [{in_features}], got {cur:?}"
                        )));
                    }
                    params.push(ParamInfo {
                        name: format!("fc{li}.weight"),
                        shape: vec![out_features, in_features],
                        layer: li,
                        fan_in: in_features,
                        mask_slot: Some(slots),
                    });
                    slots += 1;
                    if bias {
                        params.push(ParamInfo {
                            name: format!("fc{li}.bias"),
                            shape: vec![out_features],
                            layer: li,
                            fan_in: in_features,
                            mask_slot: None,
                        });
                    }
                    vec![out_features]
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {li}: conv needs positive channels, kernel and stride"
                        )));
                    }
                    if cur.len() != 3 || cur[0] != in_channels {
                        return Err(Error::InvalidSpec(format!(
                            "layer {li}: conv expects [{in_channels}, H, W], got {cur:?}"
                        )));
                    }
                    let (h, w) = (cur[1] + 2 * padding, cur[2] + 2 * padding);
                    if h < kernel || w < kernel {
                        return Err(Error::InvalidSpec(format!(
                            "layer {li}: kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    let fan_in = in_channels * kernel * kernel;
                    params.push(ParamInfo {
                        name: format!("conv{li}.weight"),
                        shape: vec![out_channels, in_channels, kernel, kernel],
                        layer: li,
                        fan_in,
                        mask_slot: Some(slots),
                    });
                    slots += 1;
                    if bias {
                        params.push(ParamInfo {
                            name: format!("conv{li}.bias"),
                            shape: vec![out_channels],
                            layer: li,
                            fan_in,
                            mask_slot: None,
                        });
                    }
                    vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]
                }
                Layer::Relu => cur,
                Layer::Flatten => vec![cur.iter().product()],
            };
            shapes.push(next);
        }
        if slots == 0 {
            return Err(Error::InvalidSpec("no maskable layer".into()));
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(Error::InvalidSpec(format!(
                "network output must be flat class scores, got {:?}",
                shapes.last().unwrap()
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            params,
        })
    }

    /// Fully connected ReLU network, e.g. `mlp(&[784, 300, 100, 10])`.
    pub fn mlp(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidSpec("mlp needs at least input and output sizes".into()));
        }
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Linear {
                in_features: pair[0],
                out_features: pair[1],
                bias: true,
            });
        }
        Self::new(vec![sizes[0]], layers)
    }

    /// Two 3x3 convolutions (the second with stride 2) followed by two dense layers.
    pub fn conv4(input: [usize; 3], channels: [usize; 2], hidden: usize, classes: usize) -> Result<Self> {
        let [c, h, w] = input;
        let (h2, w2) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
        Self::new(
            input.to_vec(),
            vec![
                Layer::Conv2d {
                    in_channels: c,
                    out_channels: channels[0],
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: true,
                },
                Layer::Relu,
                Layer::Conv2d {
                    in_channels: channels[0],
                    out_channels: channels[1],
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                    bias: true,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Linear {
                    in_features: channels[1] * h2 * w2,
                    out_features: hidden,
                    bias: true,
                },
                Layer::Relu,
                Layer::Linear {
                    in_features: hidden,
                    out_features: classes,
                    bias: true,
                },
            ],
        )
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    /// Maskable tensors in mask-slot order.
    pub fn maskable(&self) -> impl Iterator<Item = &ParamInfo> {
        self.params.iter().filter(|p| p.is_maskable())
    }

    /// `n`: total number of maskable weights.
    pub fn num_maskable(&self) -> usize {
        self.maskable().map(ParamInfo::numel).sum()
    }

    fn layer_params(&self, layer: usize) -> Option<LayerParams> {
        let weight = self
            .params
            .iter()
            .position(|p| p.layer == layer && p.is_maskable())?;
        let bias = self
            .params
            .iter()
            .position(|p| p.layer == layer && !p.is_maskable());
        Some(LayerParams { weight, bias })
    }
}

/// Trainable tensors of a network, in [`NetSpec::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub params: Vec<Tensor>,
}

impl NetState {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            params: spec.params().iter().map(|p| Tensor::zeros(p.shape.clone())).collect(),
        }
    }

    /// Checks that tensor count and shapes agree with `spec`.
    pub fn check(&self, spec: &NetSpec) -> Result<()> {
        if self.params.len() != spec.params().len() {
            return Err(Error::Dimension(format!(
                "state has {} tensors, spec expects {}",
                self.params.len(),
                spec.params().len()
            )));
        }
        for (t, p) in self.params.iter().zip(spec.params()) {
            if t.shape() != p.shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{}: shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        Ok(())
    }
}

/// He/Kaiming normal initialization: weights ~ Normal(0, 2 / fan_in), biases zero.
pub fn kaiming_normal_init(spec: &NetSpec, seed: u64) -> Result<NetState> {
    let mut rng = rng::stream(seed, Purpose::Init, 0, 0, 0);
    let mut params = Vec::with_capacity(spec.params().len());
    for p in spec.params() {
        if p.fan_in == 0 {
            return Err(Error::InvalidSpec(format!("{}: zero fan_in", p.name)));
        }
        let mut t = Tensor::zeros(p.shape.clone());
        if p.is_maskable() {
            let std = (2.0 / p.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            for v in t.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        params.push(t);
    }
    Ok(NetState { params })
}

/// Activations recorded by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, shape `[B, ...]`.
    inputs: Vec<Tensor>,
    /// `w ∘ m` for parametric layers.
    effective: Vec<Option<Vec<f64>>>,
}

/// Gradients from one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// `∂L/∂w` for every tensor in [`NetSpec::params`] order, mask held fixed.
    pub params: Vec<Tensor>,
    /// `∂L/∂m` per mask slot, weights held fixed.
    pub mask: Vec<Vec<f64>>,
}

fn check_mask(spec: &NetSpec, mask: &[Vec<f64>]) -> Result<()> {
    let expected: Vec<usize> = spec.maskable().map(ParamInfo::numel).collect();
    let got: Vec<usize> = mask.iter().map(Vec::len).collect();
    if expected != got {
        return Err(Error::Dimension(format!(
            "mask segment lengths {got:?}, expected {expected:?}"
        )));
    }
    if mask
        .iter()
        .flatten()
        .any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
    {
        return Err(Error::Input("mask entries must be finite and within [0, 1]".into()));
    }
    Ok(())
}

fn check_batch(spec: &NetSpec, batch: &Tensor) -> Result<Tensor> {
    if batch.shape().len() < 2 || batch.row_len() != spec.input_len() {
        return Err(Error::Dimension(format!(
            "batch shape {:?} does not match network input {:?}",
            batch.shape(),
            spec.input_shape()
        )));
    }
    let mut shape = vec![batch.rows()];
    shape.extend_from_slice(spec.input_shape());
    batch.clone().reshape(shape)
}

/// Logits of the masked network `h(x; w ∘ m)` plus the activation record.
pub fn forward(
    spec: &NetSpec,
    state: &NetState,
    mask: &MaskSample,
    batch: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    forward_with(spec, state, Some(&mask.values), batch)
}

/// Logits of the unmasked network.
pub fn forward_dense(spec: &NetSpec, state: &NetState, batch: &Tensor) -> Result<Tensor> {
    forward_with(spec, state, None, batch).map(|(logits, _)| logits)
}

fn forward_with(
    spec: &NetSpec,
    state: &NetState,
    mask: Option<&[Vec<f64>]>,
    batch: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    state.check(spec)?;
    if let Some(mask) = mask {
        check_mask(spec, mask)?;
    }
    let mut x = check_batch(spec, batch)?;
    let mut inputs = Vec::with_capacity(spec.layers.len());
    let mut effective = Vec::with_capacity(spec.layers.len());
    for (li, layer) in spec.layers.iter().enumerate() {
        let eff = spec.layer_params(li).map(|lp| {
            let w = state.params[lp.weight].data();
            match (mask, spec.params[lp.weight].mask_slot) {
                (Some(m), Some(slot)) => w.iter().zip(&m[slot]).map(|(w, m)| w * m).collect(),
                _ => w.to_vec(),
            }
        });
        let bias = spec
            .layer_params(li)
            .and_then(|lp| lp.bias)
            .map(|b| state.params[b].data());
        let out_shape = &spec.shapes[li + 1];
        let y = match *layer {
            Layer::Linear { .. } => linear_forward(&x, eff.as_deref().unwrap(), bias, out_shape[0]),
            Layer::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => conv_forward(&x, eff.as_deref().unwrap(), bias, out_shape, kernel, stride, padding),
            Layer::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Layer::Flatten => {
                let rows = x.rows();
                x.clone().reshape(vec![rows, out_shape[0]])?
            }
        };
        inputs.push(x);
        effective.push(eff);
        x = y;
    }
    Ok((x, ForwardCache { inputs, effective }))
}

fn linear_forward(x: &Tensor, w: &[f64], bias: Option<&[f64]>, out: usize) -> Tensor {
    let (batch, inp) = (x.rows(), x.row_len());
    let mut y = vec![0.0; batch * out];
    for b in 0..batch {
        let xb = x.row(b);
        let yb = &mut y[b * out..(b + 1) * out];
        for (o, yo) in yb.iter_mut().enumerate() {
            let wo = &w[o * inp..(o + 1) * inp];
            let dot: f64 = xb.iter().zip(wo).map(|(a, b)| a * b).sum();
            *yo = dot + bias.map_or(0.0, |bs| bs[o]);
        }
    }
    Tensor::new(vec![batch, out], y).expect("linear output shape")
}

fn conv_forward(
    x: &Tensor,
    w: &[f64],
    bias: Option<&[f64]>,
    out_shape: &[usize],
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (batch, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let xd = x.data();
    let mut y = vec![0.0; batch * c_out * ho * wo];
    for b in 0..batch {
        for o in 0..c_out {
            let base = (b * c_out + o) * ho * wo;
            let bias_o = bias.map_or(0.0, |bs| bs[o]);
            y[base..base + ho * wo].iter_mut().for_each(|v| *v = bias_o);
            for c in 0..c_in {
                let xc = &xd[(b * c_in + c) * h * wd..(b * c_in + c + 1) * h * wd];
                let wk = &w[(o * c_in + c) * k * k..(o * c_in + c + 1) * k * k];
                for p in 0..ho {
                    for q in 0..wo {
                        let mut acc = 0.0;
                        for u in 0..k {
                            let row = (p * stride + u) as isize - pad as isize;
                            if row < 0 || row >= h as isize {
                                continue;
                            }
                            for v in 0..k {
                                let col = (q * stride + v) as isize - pad as isize;
                                if col < 0 || col >= wd as isize {
                                    continue;
                                }
                                acc += wk[u * k + v] * xc[row as usize * wd + col as usize];
                            }
                        }
                        y[base + p * wo + q] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, c_out, ho, wo], y).expect("conv output shape")
}

/// Mean softmax cross-entropy and `∂loss/∂logits`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.row_len());
    if batch == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; batch * classes];
    let scale = 1.0 / batch as f64;
    for (b, &y) in labels.iter().enumerate() {
        let z = logits.row(b);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - z[y];
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (gc, zc) in g.iter_mut().zip(z) {
            *gc = (zc - lse).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, Tensor::new(vec![batch, classes], grad)?))
}

/// Loss and gradients w.r.t. weights and mask values from a single backward pass.
pub fn loss_and_grads(
    spec: &NetSpec,
    state: &NetState,
    mask: &MaskSample,
    batch: &Tensor,
    labels: &[usize],
) -> Result<Gradients> {
    if batch.numel() == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (logits, cache) = forward(spec, state, mask, batch)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let mut grads = backward(spec, state, &mask.values, &cache, dlogits);
    grads.loss = loss;
    Ok(grads)
}

fn backward(
    spec: &NetSpec,
    state: &NetState,
    mask: &[Vec<f64>],
    cache: &ForwardCache,
    mut dy: Tensor,
) -> Gradients {
    let mut params: Vec<Tensor> = spec.params.iter().map(|p| Tensor::zeros(p.shape.clone())).collect();
    let mut mask_grads: Vec<Vec<f64>> = mask.iter().map(|m| vec![0.0; m.len()]).collect();
    for (li, layer) in spec.layers.iter().enumerate().rev() {
        let x = &cache.inputs[li];
        let need_dx = li > 0;
        let dx = match *layer {
            Layer::Linear { .. } | Layer::Conv2d { .. } => {
                let lp = spec.layer_params(li).expect("parametric layer");
                let eff = cache.effective[li].as_deref().expect("effective weights");
                let mut d_eff = vec![0.0; eff.len()];
                let mut d_bias = lp.bias.map(|b| vec![0.0; spec.params[b].numel()]);
                let dx = match *layer {
                    Layer::Linear { .. } => {
                        linear_backward(x, eff, &dy, &mut d_eff, d_bias.as_deref_mut(), need_dx)
                    }
                    Layer::Conv2d {
                        kernel,
                        stride,
                        padding,
                        ..
                    } => conv_backward(
                        x,
                        eff,
                        &dy,
                        &mut d_eff,
                        d_bias.as_deref_mut(),
                        kernel,
                        stride,
                        padding,
                        need_dx,
                    ),
                    _ => unreachable!(),
                };
                let slot = spec.params[lp.weight].mask_slot.expect("weights are maskable");
                let w = state.params[lp.weight].data();
                let m = &mask[slot];
                let gw = params[lp.weight].data_mut();
                let gm = &mut mask_grads[slot];
                for i in 0..d_eff.len() {
                    gw[i] = d_eff[i] * m[i];
                    gm[i] = d_eff[i] * w[i];
                }
                if let (Some(b), Some(db)) = (lp.bias, d_bias) {
                    params[b].data_mut().copy_from_slice(&db);
                }
                dx
            }
            Layer::Relu => {
                let data = dy
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Some(Tensor::new(x.shape().to_vec(), data).expect("relu grad shape"))
            }
            Layer::Flatten => Some(
                Tensor::new(x.shape().to_vec(), dy.data().to_vec()).expect("flatten grad shape"),
            ),
        };
        match dx {
            Some(dx) if need_dx => dy = dx,
            _ => break,
        }
    }
    Gradients {
        loss: 0.0,
        params,
        mask: mask_grads,
    }
}

fn linear_backward(
    x: &Tensor,
    w: &[f64],
    dy: &Tensor,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Tensor> {
    let (batch, inp, out) = (x.rows(), x.row_len(), dy.row_len());
    for b in 0..batch {
        let xb = x.row(b);
        for (o, &g) in dy.row(b).iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xb) {
                *d += g * xv;
            }
        }
    }
    if let Some(db) = db {
        for b in 0..batch {
            for (d, &g) in db.iter_mut().zip(dy.row(b)) {
                *d += g;
            }
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![0.0; batch * inp];
    for b in 0..batch {
        let dxb = &mut dx[b * inp..(b + 1) * inp];
        for (o, &g) in dy.row(b).iter().enumerate().take(out) {
            if g == 0.0 {
                continue;
            }
            for (d, &wv) in dxb.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                *d += g * wv;
            }
        }
    }
    Some(Tensor::new(x.shape().to_vec(), dx).expect("linear grad shape"))
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &Tensor,
    w: &[f64],
    dy: &Tensor,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    k: usize,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Option<Tensor> {
    let (batch, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, ho, wo) = (dy.shape()[1], dy.shape()[2], dy.shape()[3]);
    let xd = x.data();
    let gd = dy.data();
    let mut dx = if need_dx { vec![0.0; xd.len()] } else { Vec::new() };
    for b in 0..batch {
        for o in 0..c_out {
            let g_base = (b * c_out + o) * ho * wo;
            for c in 0..c_in {
                let x_base = (b * c_in + c) * h * wd;
                let w_base = (o * c_in + c) * k * k;
                for p in 0..ho {
                    for q in 0..wo {
                        let g = gd[g_base + p * wo + q];
                        if g == 0.0 {
                            continue;
                        }
                        for u in 0..k {
                            let row = (p * stride + u) as isize - pad as isize;
                            if row < 0 || row >= h as isize {
                                continue;
                            }
                            for v in 0..k {
                                let col = (q * stride + v) as isize - pad as isize;
                                if col < 0 || col >= wd as isize {
                                    continue;
                                }
                                let xi = x_base + row as usize * wd + col as usize;
                                dw[w_base + u * k + v] += g * xd[xi];
                                if need_dx {
                                    dx[xi] += g * w[w_base + u * k + v];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        for b in 0..batch {
            for (o, d) in db.iter_mut().enumerate() {
                let g_base = (b * c_out + o) * ho * wo;
                *d += gd[g_base..g_base + ho * wo].iter().sum::<f64>();
            }
        }
    }
    need_dx.then(|| Tensor::new(x.shape().to_vec(), dx).expect("conv grad shape"))
}
