//! A small CPU convolutional network engine: layer graph, forward pass,
//! reverse-mode gradients, initialization and the Adam optimizer.
//!
//! Parameters live in one flat `Vec<f64>`; each layer records the offsets of
//! its slices. Non-trainable state (batch-norm running statistics) lives in a
//! second flat buffer. Gradients are computed per sample, which keeps samples
//! independent and makes batch-level parallelism trivially deterministic.

mod builder;
mod conv;
mod loss;
mod optim;
mod pool;

pub use builder::{Init, NetBuilder};
pub use conv::Conv2d;
pub use loss::{bce_with_logits, sigmoid};
pub use optim::{Adam, AdamConfig};
pub use pool::{Pool, PoolKind};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Channel-major (C × H × W) activations of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len(), "tensor data does not match shape");
        Tensor { shape, data }
    }

    /// Converts an interleaved HWC raster into a CHW tensor.
    pub fn from_raster<T: Copy + Into<f64>>(r: &crate::raster::Raster<T>) -> Self {
        let (h, w, c) = r.shape();
        let src = r.data();
        let mut data = vec![0.0; h * w * c];
        for (i, px) in src.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + i] = v.into();
            }
        }
        Tensor {
            shape: Shape::new(c, h, w),
            data,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.h + y) * self.shape.w + x]
    }
}

/// Inference-mode batch normalization: `y = γ·(x − μ)/√(σ² + ε) + β` with
/// running statistics held fixed. γ is optional (absent ⇒ 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f64,
    pub gamma_off: Option<usize>,
    pub beta_off: usize,
    pub mean_buf: usize,
    pub var_buf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// `y = x · mul + add`, no parameters.
    Scale { mul: f64, add: f64 },
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    Pool(Pool),
    GlobalAvgPool,
    GlobalMaxPool,
    Dense(Dense),
    /// Runs each branch on the same input and concatenates along channels.
    Branches(Vec<Vec<Layer>>),
}

impl Layer {
    fn has_params(&self) -> bool {
        match self {
            Layer::Conv(_) | Layer::BatchNorm(_) | Layer::Dense(_) => true,
            Layer::Branches(bs) => bs.iter().flatten().any(Layer::has_params),
            _ => false,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Scale { .. } => "scale",
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu => "relu",
            Layer::Pool(_) => "pool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::GlobalMaxPool => "global_max_pool",
            Layer::Dense(_) => "dense",
            Layer::Branches(_) => "branches",
        }
    }

    /// Number of leaf layers (a branch block counts its members plus the
    /// concatenation).
    pub fn leaf_count(&self) -> usize {
        match self {
            Layer::Branches(bs) => 1 + bs.iter().flatten().map(Layer::leaf_count).sum::<usize>(),
            _ => 1,
        }
    }
}

/// Saved forward state needed by the backward pass of one layer.
#[derive(Debug)]
enum Cache {
    Empty,
    Input(Tensor),
    Output(Tensor),
    Indices(Vec<u32>),
    Shape(Shape),
    Argmax(Shape, Vec<u32>),
    Branches(Vec<(usize, Vec<Cache>)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input: Shape,
    pub output: Shape,
    pub layers: Vec<Layer>,
    pub n_params: usize,
    pub n_buffers: usize,
    pub init: Vec<Init>,
}

/// Network weights: trainable parameters plus fixed buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub params: Vec<f64>,
    pub buffers: Vec<f64>,
}

impl Network {
    pub fn leaf_count(&self) -> usize {
        self.layers.iter().map(Layer::leaf_count).sum()
    }

    pub fn describe(&self) -> Vec<&'static str> {
        self.layers.iter().map(Layer::name).collect()
    }

    /// Offset of the first parameter owned by top-level layer `index` or
    /// later; parameters before it belong to earlier layers.
    pub fn param_boundary(&self, index: usize) -> usize {
        fn first_param(layers: &[Layer]) -> Option<usize> {
            layers.iter().find_map(|l| match l {
                Layer::Conv(c) => Some(c.w_off),
                Layer::BatchNorm(b) => Some(b.gamma_off.unwrap_or(b.beta_off)),
                Layer::Dense(d) => Some(d.w_off),
                Layer::Branches(bs) => bs.iter().filter_map(|b| first_param(b)).min(),
                _ => None,
            })
        }
        first_param(&self.layers[index.min(self.layers.len())..]).unwrap_or(self.n_params)
    }

    pub fn forward(&self, w: &Weights, x: Tensor) -> Tensor {
        assert_eq!(x.shape, self.input, "input shape mismatch");
        run_forward(&self.layers, w, x, None)
    }

    /// Forward pass followed by a backward pass seeded with `grad_of(output)`.
    /// Accumulates parameter gradients into `grads` and returns the output
    /// together with the gradient w.r.t. the input when `want_input_grad`.
    pub fn forward_backward(
        &self,
        w: &Weights,
        x: Tensor,
        grads: &mut [f64],
        want_input_grad: bool,
        grad_of: impl FnOnce(&Tensor) -> Tensor,
    ) -> (Tensor, Option<Tensor>) {
        assert_eq!(x.shape, self.input, "input shape mismatch");
        assert_eq!(grads.len(), self.n_params);
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = run_forward(&self.layers, w, x, Some(&mut caches));
        let g = grad_of(&out);
        assert_eq!(g.shape, out.shape);
        let gin = run_backward(&self.layers, w, caches, g, grads, want_input_grad);
        (out, gin)
    }
}

fn run_forward(layers: &[Layer], w: &Weights, mut x: Tensor, mut caches: Option<&mut Vec<Cache>>) -> Tensor {
    for layer in layers {
        let train = caches.is_some();
        let (y, cache) = match layer {
            Layer::Scale { mul, add } => {
                x.data.iter_mut().for_each(|v| *v = *v * mul + add);
                (x, Cache::Empty)
            }
            Layer::Conv(conv) => {
                let (y, col) = conv.forward(&w.params, &x, train);
                (y, col.map_or(Cache::Empty, Cache::Input))
            }
            Layer::BatchNorm(bn) => {
                let y = bn_forward(bn, w, &x);
                (y, if train { Cache::Input(x) } else { Cache::Empty })
            }
            Layer::Relu => {
                x.data.iter_mut().for_each(|v| *v = v.max(0.0));
                if train {
                    (x.clone(), Cache::Output(x))
                } else {
                    (x, Cache::Empty)
                }
            }
            Layer::Pool(p) => {
                let (y, idx) = p.forward(&x, train);
                (y, idx.map_or(Cache::Empty, Cache::Indices))
            }
            Layer::GlobalAvgPool => {
                let hw = (x.shape.h * x.shape.w) as f64;
                let data = x.data.chunks(x.shape.h * x.shape.w).map(|c| c.iter().sum::<f64>() / hw).collect();
                (Tensor::from_vec(Shape::new(x.shape.c, 1, 1), data), Cache::Shape(x.shape))
            }
            Layer::GlobalMaxPool => {
                let hw = x.shape.h * x.shape.w;
                let mut idx = Vec::with_capacity(x.shape.c);
                let mut data = Vec::with_capacity(x.shape.c);
                for (c, chunk) in x.data.chunks(hw).enumerate() {
                    let (best, v) = chunk.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| {
                        if v > acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    });
                    idx.push((c * hw + best) as u32);
                    data.push(v);
                }
                (Tensor::from_vec(Shape::new(x.shape.c, 1, 1), data), Cache::Argmax(x.shape, idx))
            }
            Layer::Dense(d) => {
                let y = dense_forward(d, &w.params, &x);
                (y, if train { Cache::Input(x) } else { Cache::Empty })
            }
            Layer::Branches(branches) => {
                let mut outs = Vec::with_capacity(branches.len());
                let mut bcaches = Vec::new();
                for b in branches {
                    if caches.is_some() {
                        let mut bc = Vec::with_capacity(b.len());
                        let y = run_forward(b, w, x.clone(), Some(&mut bc));
                        bcaches.push((y.shape.c, bc));
                        outs.push(y);
                    } else {
                        outs.push(run_forward(b, w, x.clone(), None));
                    }
                }
                let (h, wd) = (outs[0].shape.h, outs[0].shape.w);
                let c: usize = outs.iter().map(|t| t.shape.c).sum();
                let mut data = Vec::with_capacity(c * h * wd);
                for t in outs {
                    assert_eq!((t.shape.h, t.shape.w), (h, wd), "branch spatial shapes differ");
                    data.extend_from_slice(&t.data);
                }
                (Tensor::from_vec(Shape::new(c, h, wd), data), Cache::Branches(bcaches))
            }
        };
        if let Some(cs) = caches.as_deref_mut() {
            cs.push(cache);
        }
        x = y;
    }
    x
}

fn run_backward(
    layers: &[Layer],
    w: &Weights,
    caches: Vec<Cache>,
    mut g: Tensor,
    grads: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor> {
    // Nothing upstream of the first trainable layer needs a gradient.
    let first = layers.iter().position(Layer::has_params).unwrap_or(layers.len());
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let need = i > first || want_input_grad;
        g = match (layer, cache) {
            (Layer::Scale { mul, .. }, _) => {
                g.data.iter_mut().for_each(|v| *v *= mul);
                g
            }
            (Layer::Conv(conv), Cache::Input(col)) => match conv.backward(&w.params, &col, &g, grads, need) {
                Some(gx) => gx,
                None => return None,
            },
            (Layer::BatchNorm(bn), Cache::Input(x)) => bn_backward(bn, w, &x, g, grads),
            (Layer::Relu, Cache::Output(y)) => {
                g.data.iter_mut().zip(&y.data).for_each(|(gv, &yv)| {
                    if yv <= 0.0 {
                        *gv = 0.0
                    }
                });
                g
            }
            (Layer::Pool(p), cache) => {
                let idx = match cache {
                    Cache::Indices(i) => Some(i),
                    _ => None,
                };
                p.backward(&g, idx.as_deref())
            }
            (Layer::GlobalAvgPool, Cache::Shape(shape)) => {
                let hw = shape.h * shape.w;
                let mut gx = Tensor::zeros(shape);
                for (c, chunk) in gx.data.chunks_mut(hw).enumerate() {
                    let v = g.data[c] / hw as f64;
                    chunk.iter_mut().for_each(|e| *e = v);
                }
                gx
            }
            (Layer::GlobalMaxPool, Cache::Argmax(shape, idx)) => {
                let mut gx = Tensor::zeros(shape);
                for (c, &k) in idx.iter().enumerate() {
                    gx.data[k as usize] += g.data[c];
                }
                gx
            }
            (Layer::Dense(d), Cache::Input(x)) => dense_backward(d, &w.params, &x, &g, grads),
            (Layer::Branches(branches), Cache::Branches(bcaches)) => {
                let mut gin: Option<Tensor> = None;
                let hw = g.shape.h * g.shape.w;
                let mut start = 0;
                for (b, (c, bc)) in branches.iter().zip(bcaches) {
                    let gb = Tensor::from_vec(
                        Shape::new(c, g.shape.h, g.shape.w),
                        g.data[start * hw..(start + c) * hw].to_vec(),
                    );
                    start += c;
                    if let Some(gx) = run_backward(b, w, bc, gb, grads, need) {
                        match gin.as_mut() {
                            None => gin = Some(gx),
                            Some(acc) => acc.data.iter_mut().zip(&gx.data).for_each(|(a, v)| *a += v),
                        }
                    }
                }
                match gin {
                    Some(t) if need => t,
                    _ => return None,
                }
            }
            (l, _) => unreachable!("missing cache for {}", l.name()),
        };
        if !need {
            return None;
        }
    }
    Some(g)
}

fn bn_scale_shift(bn: &BatchNorm, w: &Weights, c: usize) -> (f64, f64, f64) {
    let gamma = bn.gamma_off.map_or(1.0, |o| w.params[o + c]);
    let inv = 1.0 / (w.buffers[bn.var_buf + c] + bn.eps).sqrt();
    let mean = w.buffers[bn.mean_buf + c];
    (gamma * inv, w.params[bn.beta_off + c] - gamma * inv * mean, inv)
}

fn bn_forward(bn: &BatchNorm, w: &Weights, x: &Tensor) -> Tensor {
    let hw = x.shape.h * x.shape.w;
    let mut y = x.clone();
    for (c, chunk) in y.data.chunks_mut(hw).enumerate() {
        let (a, b, _) = bn_scale_shift(bn, w, c);
        chunk.iter_mut().for_each(|v| *v = a * *v + b);
    }
    y
}

fn bn_backward(bn: &BatchNorm, w: &Weights, x: &Tensor, mut g: Tensor, grads: &mut [f64]) -> Tensor {
    let hw = x.shape.h * x.shape.w;
    for c in 0..bn.channels {
        let (a, _, inv) = bn_scale_shift(bn, w, c);
        let mean = w.buffers[bn.mean_buf + c];
        let gs = &mut g.data[c * hw..(c + 1) * hw];
        let xs = &x.data[c * hw..(c + 1) * hw];
        let mut dbeta = 0.0;
        let mut dgamma = 0.0;
        for (gv, &xv) in gs.iter_mut().zip(xs) {
            dbeta += *gv;
            dgamma += *gv * (xv - mean) * inv;
            *gv *= a;
        }
        grads[bn.beta_off + c] += dbeta;
        if let Some(o) = bn.gamma_off {
            grads[o + c] += dgamma;
        }
    }
    g
}

fn dense_forward(d: &Dense, p: &[f64], x: &Tensor) -> Tensor {
    let wts = &p[d.w_off..d.w_off + d.inputs * d.outputs];
    let data = (0..d.outputs)
        .map(|o| {
            let row = &wts[o * d.inputs..(o + 1) * d.inputs];
            p[d.b_off + o] + row.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::from_vec(Shape::new(d.outputs, 1, 1), data)
}

fn dense_backward(d: &Dense, p: &[f64], x: &Tensor, g: &Tensor, grads: &mut [f64]) -> Tensor {
    let mut gx = Tensor::zeros(x.shape);
    for o in 0..d.outputs {
        let go = g.data[o];
        grads[d.b_off + o] += go;
        let row = d.w_off + o * d.inputs;
        for i in 0..d.inputs {
            grads[row + i] += go * x.data[i];
            gx.data[i] += go * p[row + i];
        }
    }
    gx
}

#[cfg(test)]
mod tests;
