use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

use super::gemm;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: Shape, weight: Shape, bias: Shape, stride: usize, pad: usize) -> Result<Self> {
        if weight.c != input.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input,
                rhs: weight,
            });
        }
        if weight.h != weight.w || weight.h % 2 == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be square and odd, got weight {weight}"),
            ));
        }
        if bias != Shape::new(1, weight.n, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: weight,
                rhs: bias,
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let k = weight.h;
        if input.h + 2 * pad < k || input.w + 2 * pad < k {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {k} larger than padded input {input}"),
            ));
        }
        Ok(ConvGeom {
            c_in: input.c,
            h: input.h,
            w: input.w,
            c_out: weight.n,
            k,
            stride,
            pad,
            oh: (input.h + 2 * pad - k) / stride + 1,
            ow: (input.w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 stride-1 unpadded convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.out_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.out_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn forward(x: &Tensor4, w: &Tensor4, b: &Tensor4, g: &ConvGeom) -> Tensor4 {
    let n = x.shape().n;
    let out_shape = Shape::new(n, g.c_out, g.oh, g.ow);
    let (kk, p) = (g.patch(), g.out_plane());
    let mut out = vec![0.0; out_shape.len()];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * p]
    };
    for i in 0..n {
        let xi = x.item(i);
        let cols_ref: &[f64] = if g.is_pointwise() {
            xi
        } else {
            im2col(xi, g, &mut cols);
            &cols
        };
        let oi = &mut out[i * g.c_out * p..(i + 1) * g.c_out * p];
        for (o, row) in oi.chunks_mut(p).enumerate() {
            row.fill(b.data()[o]);
        }
        // out (c_out x p) += W (c_out x kk) * cols (kk x p)
        gemm(g.c_out, kk, p, w.data(), (kk, 1), cols_ref, (p, 1), oi, 1.0);
    }
    Tensor4::from_parts(out_shape, out)
}

pub(crate) struct ConvGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub(crate) fn backward(x: &Tensor4, w: &Tensor4, gout: &[f64], g: &ConvGeom) -> ConvGrads {
    let n = x.shape().n;
    let (kk, p) = (g.patch(), g.out_plane());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.c_out];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * p]
    };
    let mut dcols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * p]
    };
    let item_in = x.shape().item();
    for i in 0..n {
        let go = &gout[i * g.c_out * p..(i + 1) * g.c_out * p];
        for (o, row) in go.chunks(p).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        let xi = x.item(i);
        let dxi = &mut dx[i * item_in..(i + 1) * item_in];
        if g.is_pointwise() {
            // dW (c_out x kk) += gout (c_out x p) * x^T (p x kk)
            gemm(g.c_out, p, kk, go, (p, 1), xi, (1, p), &mut dw, 1.0);
            // dx (kk x p) = W^T (kk x c_out) * gout (c_out x p)
            gemm(kk, g.c_out, p, w.data(), (1, kk), go, (p, 1), dxi, 0.0);
        } else {
            im2col(xi, g, &mut cols);
            gemm(g.c_out, p, kk, go, (p, 1), &cols, (1, p), &mut dw, 1.0);
            gemm(kk, g.c_out, p, w.data(), (1, kk), go, (p, 1), &mut dcols, 0.0);
            col2im_add(&dcols, g, dxi);
        }
    }
    ConvGrads { dx, dw, db }
}
