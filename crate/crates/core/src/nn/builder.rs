use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Conv2d, Dense, Layer, Network, Pool, PoolKind, Shape, Weights};

/// How one parameter or buffer slice is initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// N(0, 2 / fan_in).
    HeNormal { off: usize, len: usize, fan_in: usize },
    /// U(−l, l) with l = √(6 / (fan_in + fan_out)).
    GlorotUniform { off: usize, len: usize, fan_in: usize, fan_out: usize },
    Const { off: usize, len: usize, value: f64 },
    Buffer { off: usize, len: usize, value: f64 },
}

/// Sequential network builder that tracks the running activation shape and
/// hands out parameter offsets.
pub struct NetBuilder {
    input: Shape,
    shape: Shape,
    layers: Vec<Layer>,
    n_params: usize,
    n_buffers: usize,
    init: Vec<Init>,
}

impl NetBuilder {
    pub fn new(input: Shape) -> Self {
        NetBuilder {
            input,
            shape: input,
            layers: Vec::new(),
            n_params: 0,
            n_buffers: 0,
            init: Vec::new(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn alloc(&mut self, len: usize) -> usize {
        let off = self.n_params;
        self.n_params += len;
        off
    }

    fn alloc_buffer(&mut self, len: usize) -> usize {
        let off = self.n_buffers;
        self.n_buffers += len;
        off
    }

    pub fn scale(&mut self, mul: f64, add: f64) -> &mut Self {
        self.layers.push(Layer::Scale { mul, add });
        self
    }

    pub fn conv(&mut self, out_c: usize, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize), bias: bool) -> &mut Self {
        let output = Conv2d::output_shape(self.shape, out_c, kernel, stride, pad);
        let fan_in = self.shape.c * kernel.0 * kernel.1;
        let len = out_c * fan_in;
        let w_off = self.alloc(len);
        self.init.push(Init::HeNormal { off: w_off, len, fan_in });
        let b_off = bias.then(|| {
            let off = self.alloc(out_c);
            self.init.push(Init::Const { off, len: out_c, value: 0.0 });
            off
        });
        self.layers.push(Layer::Conv(Conv2d {
            input: self.shape,
            output,
            kernel,
            stride,
            pad,
            w_off,
            b_off,
        }));
        self.shape = output;
        self
    }

    pub fn batch_norm(&mut self, eps: f64, with_gamma: bool) -> &mut Self {
        let c = self.shape.c;
        let gamma_off = with_gamma.then(|| {
            let off = self.alloc(c);
            self.init.push(Init::Const { off, len: c, value: 1.0 });
            off
        });
        let beta_off = self.alloc(c);
        self.init.push(Init::Const { off: beta_off, len: c, value: 0.0 });
        let mean_buf = self.alloc_buffer(c);
        let var_buf = self.alloc_buffer(c);
        self.init.push(Init::Buffer { off: mean_buf, len: c, value: 0.0 });
        self.init.push(Init::Buffer { off: var_buf, len: c, value: 1.0 });
        self.layers.push(Layer::BatchNorm(BatchNorm {
            channels: c,
            eps,
            gamma_off,
            beta_off,
            mean_buf,
            var_buf,
        }));
        self
    }

    pub fn relu(&mut self) -> &mut Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn max_pool(&mut self, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        self.pool(PoolKind::Max, kernel, stride, pad)
    }

    pub fn avg_pool(&mut self, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        self.pool(PoolKind::Avg, kernel, stride, pad)
    }

    fn pool(&mut self, kind: PoolKind, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        let p = Pool::new(kind, self.shape, kernel, stride, pad);
        self.shape = p.output;
        self.layers.push(Layer::Pool(p));
        self
    }

    pub fn global_avg_pool(&mut self) -> &mut Self {
        self.shape = Shape::new(self.shape.c, 1, 1);
        self.layers.push(Layer::GlobalAvgPool);
        self
    }

    pub fn global_max_pool(&mut self) -> &mut Self {
        self.shape = Shape::new(self.shape.c, 1, 1);
        self.layers.push(Layer::GlobalMaxPool);
        self
    }

    pub fn dense(&mut self, outputs: usize) -> &mut Self {
        let inputs = self.shape.len();
        let w_off = self.alloc(inputs * outputs);
        self.init.push(Init::GlorotUniform {
            off: w_off,
            len: inputs * outputs,
            fan_in: inputs,
            fan_out: outputs,
        });
        let b_off = self.alloc(outputs);
        self.init.push(Init::Const { off: b_off, len: outputs, value: 0.0 });
        self.layers.push(Layer::Dense(Dense {
            inputs,
            outputs,
            w_off,
            b_off,
        }));
        self.shape = Shape::new(outputs, 1, 1);
        self
    }

    /// Parallel branches over the current activation, concatenated along
    /// channels. Branch outputs must agree spatially.
    pub fn branches(&mut self, branches: &[&dyn Fn(&mut NetBuilder)]) -> &mut Self {
        let mut built = Vec::with_capacity(branches.len());
        let mut channels = 0;
        let mut spatial = None;
        for f in branches {
            let mut sub = NetBuilder {
                input: self.shape,
                shape: self.shape,
                layers: Vec::new(),
                n_params: self.n_params,
                n_buffers: self.n_buffers,
                init: Vec::new(),
            };
            f(&mut sub);
            let hw = (sub.shape.h, sub.shape.w);
            assert!(spatial.is_none_or(|s| s == hw), "branch outputs differ spatially");
            spatial = Some(hw);
            channels += sub.shape.c;
            self.n_params = sub.n_params;
            self.n_buffers = sub.n_buffers;
            self.init.extend(sub.init);
            built.push(sub.layers);
        }
        let (h, w) = spatial.expect("at least one branch");
        self.shape = Shape::new(channels, h, w);
        self.layers.push(Layer::Branches(built));
        self
    }

    pub fn build(self) -> Network {
        Network {
            input: self.input,
            output: self.shape,
            layers: self.layers,
            n_params: self.n_params,
            n_buffers: self.n_buffers,
            init: self.init,
        }
    }
}

impl Network {
    /// Fresh weights drawn from the recorded initializers.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Weights {
        let mut params = vec![0.0; self.n_params];
        let mut buffers = vec![0.0; self.n_buffers];
        for spec in &self.init {
            match *spec {
                Init::HeNormal { off, len, fan_in } => {
                    let sd = (2.0 / fan_in as f64).sqrt();
                    for v in &mut params[off..off + len] {
                        *v = sd * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                Init::GlorotUniform { off, len, fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in &mut params[off..off + len] {
                        *v = rng.random_range(-limit..limit);
                    }
                }
                Init::Const { off, len, value } => params[off..off + len].fill(value),
                Init::Buffer { off, len, value } => buffers[off..off + len].fill(value),
            }
        }
        Weights { params, buffers }
    }
}
