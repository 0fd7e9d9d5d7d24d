use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};

/// 2-D convolution lowered to a matrix product over an im2col buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub input: Shape,
    pub output: Shape,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub w_off: usize,
    pub b_off: Option<usize>,
}

impl Conv2d {
    pub fn output_shape(input: Shape, out_c: usize, kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Shape {
        assert!(input.h + 2 * pad.0 >= kernel.0 && input.w + 2 * pad.1 >= kernel.1, "kernel larger than padded input");
        Shape::new(
            out_c,
            (input.h + 2 * pad.0 - kernel.0) / stride.0 + 1,
            (input.w + 2 * pad.1 - kernel.1) / stride.1 + 1,
        )
    }

    pub fn weight_count(&self) -> usize {
        self.output.c * self.patch_len()
    }

    fn patch_len(&self) -> usize {
        self.input.c * self.kernel.0 * self.kernel.1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }

    fn im2col(&self, x: &Tensor) -> Tensor {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let (oh, ow) = (self.output.h, self.output.w);
        let (ih, iw) = (self.input.h as isize, self.input.w as isize);
        let p = oh * ow;
        let mut col = vec![0.0; self.patch_len() * p];
        let mut row = 0;
        for c in 0..self.input.c {
            let plane = &x.data[c * self.input.h * self.input.w..(c + 1) * self.input.h * self.input.w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * sh + ky) as isize - ph;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        let src_row = &plane[iy as usize * iw as usize..(iy as usize + 1) * iw as usize];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw;
                            if ix >= 0 && ix < iw {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        Tensor::from_vec(Shape::new(self.patch_len(), 1, p), col)
    }

    fn col2im(&self, col: &[f64]) -> Tensor {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = (self.pad.0 as isize, self.pad.1 as isize);
        let (oh, ow) = (self.output.h, self.output.w);
        let (ih, iw) = (self.input.h as isize, self.input.w as isize);
        let p = oh * ow;
        let mut gx = Tensor::zeros(self.input);
        let mut row = 0;
        for c in 0..self.input.c {
            let plane_len = self.input.h * self.input.w;
            let plane = &mut gx.data[c * plane_len..(c + 1) * plane_len];
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * sh + ky) as isize - ph;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        let base = iy as usize * iw as usize;
                        for ox in 0..ow {
                            let ix = (ox * sw + kx) as isize - pw;
                            if ix >= 0 && ix < iw {
                                plane[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        gx
    }

    /// Returns the output and, when `keep`, the lowered input for backward.
    pub(super) fn forward(&self, params: &[f64], x: &Tensor, keep: bool) -> (Tensor, Option<Tensor>) {
        assert_eq!(x.shape, self.input, "conv input shape");
        let col = if self.is_pointwise() { x.clone() } else { self.im2col(x) };
        let k = self.patch_len();
        let p = self.output.h * self.output.w;
        let m = self.output.c;
        let mut out = vec![0.0; m * p];
        if let Some(b) = self.b_off {
            for (o, chunk) in out.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = params[b + o]);
            }
        }
        let w = &params[self.w_off..self.w_off + m * k];
        unsafe {
            matrixmultiply::dgemm(
                m, k, p,
                1.0,
                w.as_ptr(), k as isize, 1,
                col.data.as_ptr(), p as isize, 1,
                1.0,
                out.as_mut_ptr(), p as isize, 1,
            );
        }
        (Tensor::from_vec(self.output, out), keep.then_some(col))
    }

    pub(super) fn backward(
        &self,
        params: &[f64],
        col: &Tensor,
        g: &Tensor,
        grads: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Tensor> {
        let k = self.patch_len();
        let p = self.output.h * self.output.w;
        let m = self.output.c;
        if let Some(b) = self.b_off {
            for (o, chunk) in g.data.chunks(p).enumerate() {
                grads[b + o] += chunk.iter().sum::<f64>();
            }
        }
        // dW (m × k) += g (m × p) · colᵀ (p × k)
        let dw = &mut grads[self.w_off..self.w_off + m * k];
        unsafe {
            matrixmultiply::dgemm(
                m, p, k,
                1.0,
                g.data.as_ptr(), p as isize, 1,
                col.data.as_ptr(), 1, p as isize,
                1.0,
                dw.as_mut_ptr(), k as isize, 1,
            );
        }
        if !want_input_grad {
            return None;
        }
        // dcol (k × p) = Wᵀ (k × m) · g (m × p)
        let w = &params[self.w_off..self.w_off + m * k];
        let mut dcol = vec![0.0; k * p];
        unsafe {
            matrixmultiply::dgemm(
                k, m, p,
                1.0,
                w.as_ptr(), 1, k as isize,
                g.data.as_ptr(), p as isize, 1,
                0.0,
                dcol.as_mut_ptr(), p as isize, 1,
            );
        }
        Some(if self.is_pointwise() {
            Tensor::from_vec(self.input, dcol)
        } else {
            self.col2im(&dcol)
        })
    }
}
