use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    /// Average over the in-bounds part of each window (padding not counted).
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub kind: PoolKind,
    pub input: Shape,
    pub output: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Pool {
    pub fn new(kind: PoolKind, input: Shape, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(input.h + 2 * pad >= kernel && input.w + 2 * pad >= kernel, "pool window larger than input");
        let output = Shape::new(
            input.c,
            (input.h + 2 * pad - kernel) / stride + 1,
            (input.w + 2 * pad - kernel) / stride + 1,
        );
        Pool {
            kind,
            input,
            output,
            kernel,
            stride,
            pad,
        }
    }

    /// In-bounds input range covered by output position `o` along an axis of length `n`.
    #[inline]
    fn span(&self, o: usize, n: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let end = (start + self.kernel as isize).min(n as isize);
        (start.max(0) as usize, end.max(0) as usize)
    }

    pub(super) fn forward(&self, x: &Tensor, keep: bool) -> (Tensor, Option<Vec<u32>>) {
        let (ih, iw) = (self.input.h, self.input.w);
        let (oh, ow) = (self.output.h, self.output.w);
        let mut out = Tensor::zeros(self.output);
        let mut idx = (keep && self.kind == PoolKind::Max).then(|| vec![0u32; self.output.len()]);
        for c in 0..self.input.c {
            let plane = &x.data[c * ih * iw..(c + 1) * ih * iw];
            for oy in 0..oh {
                let (y0, y1) = self.span(oy, ih);
                for ox in 0..ow {
                    let (x0, x1) = self.span(ox, iw);
                    let o = (c * oh + oy) * ow + ox;
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = 0;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    let v = plane[y * iw + xx];
                                    if v > best {
                                        best = v;
                                        arg = y * iw + xx;
                                    }
                                }
                            }
                            out.data[o] = best;
                            if let Some(idx) = idx.as_mut() {
                                idx[o] = (c * ih * iw + arg) as u32;
                            }
                        }
                        PoolKind::Avg => {
                            let mut sum = 0.0;
                            for y in y0..y1 {
                                sum += plane[y * iw + x0..y * iw + x1].iter().sum::<f64>();
                            }
                            out.data[o] = sum / ((y1 - y0) * (x1 - x0)) as f64;
                        }
                    }
                }
            }
        }
        (out, idx)
    }

    pub(super) fn backward(&self, g: &Tensor, idx: Option<&[u32]>) -> Tensor {
        let mut gx = Tensor::zeros(self.input);
        match self.kind {
            PoolKind::Max => {
                let idx = idx.expect("max pool backward needs argmax indices");
                for (o, &i) in idx.iter().enumerate() {
                    gx.data[i as usize] += g.data[o];
                }
            }
            PoolKind::Avg => {
                let (ih, iw) = (self.input.h, self.input.w);
                let (oh, ow) = (self.output.h, self.output.w);
                for c in 0..self.input.c {
                    for oy in 0..oh {
                        let (y0, y1) = self.span(oy, ih);
                        for ox in 0..ow {
                            let (x0, x1) = self.span(ox, iw);
                            let share = g.data[(c * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    gx.data[(c * ih + y) * iw + xx] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}
