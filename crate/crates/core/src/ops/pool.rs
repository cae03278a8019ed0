use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

use super::shifted_mean;

/// 2x2 stride-2 max pooling. Returns the output and, for every output cell,
/// the flat input index it was taken from. Ties keep the first position in
/// row-major window order.
pub(crate) fn maxpool2(x: &Tensor4) -> Result<(Tensor4, Vec<u32>)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::invalid(
            "maxpool2d",
            format!("spatial dims must be even, got {s}"),
        ));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let d = x.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut best = base + 2 * oy * s.w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor4::from_parts(out_shape, out), argmax))
}

/// Bin `i` of `out` over an axis of length `len` covers
/// `floor(i*len/out) .. floor((i+1)*len/out)`.
pub(crate) fn bin_bounds(len: usize, out: usize, i: usize) -> (usize, usize) {
    (i * len / out, (i + 1) * len / out)
}

pub(crate) fn adaptive_avgpool(x: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 || out_h > s.h || out_w > s.w {
        return Err(Error::invalid(
            "adaptive_avgpool2d",
            format!("target {out_h}x{out_w} not within input {s}"),
        ));
    }
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for i in 0..out_h {
                let (y0, y1) = bin_bounds(s.h, out_h, i);
                for j in 0..out_w {
                    let (x0, x1) = bin_bounds(s.w, out_w, j);
                    let cells = (y0..y1).flat_map(|y| plane[y * s.w + x0..y * s.w + x1].iter().copied());
                    out.push(shifted_mean(cells));
                }
            }
        }
    }
    Ok(Tensor4::from_parts(out_shape, out))
}

pub(crate) fn adaptive_avgpool_backward(input: Shape, gout: &Tensor4) -> Vec<f64> {
    let os = gout.shape();
    let mut dx = vec![0.0; input.len()];
    for n in 0..input.n {
        for c in 0..input.c {
            let base = (n * input.c + c) * input.plane();
            let g = gout.plane(n, c);
            for i in 0..os.h {
                let (y0, y1) = bin_bounds(input.h, os.h, i);
                for j in 0..os.w {
                    let (x0, x1) = bin_bounds(input.w, os.w, j);
                    let share = g[i * os.w + j] / ((y1 - y0) * (x1 - x0)) as f64;
                    for y in y0..y1 {
                        for v in &mut dx[base + y * input.w + x0..base + y * input.w + x1] {
                            *v += share;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Per-(item, channel) mean over the spatial plane: `(n, c, 1, 1)`.
pub(crate) fn global_avg(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let data = (0..s.n * s.c)
        .map(|i| shifted_mean(x.plane(i / s.c, i % s.c).iter().copied()))
        .collect();
    Tensor4::from_parts(Shape::new(s.n, s.c, 1, 1), data)
}

/// Per-(item, channel) spatial max with first-index tie-break.
pub(crate) fn global_max(x: &Tensor4) -> (Tensor4, Vec<u32>) {
    let s = x.shape();
    let mut out = Vec::with_capacity(s.n * s.c);
    let mut arg = Vec::with_capacity(s.n * s.c);
    for i in 0..s.n * s.c {
        let plane = x.plane(i / s.c, i % s.c);
        let mut best = 0;
        for (k, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = k;
            }
        }
        out.push(plane[best]);
        arg.push((i * s.plane() + best) as u32);
    }
    (Tensor4::from_parts(Shape::new(s.n, s.c, 1, 1), out), arg)
}

/// Per-pixel mean across channels: `(n, 1, h, w)`.
pub(crate) fn channel_mean(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let p = s.plane();
    let mut out = Vec::with_capacity(s.n * p);
    for n in 0..s.n {
        let item = x.item(n);
        for k in 0..p {
            out.push(shifted_mean((0..s.c).map(|c| item[c * p + k])));
        }
    }
    Tensor4::from_parts(Shape::new(s.n, 1, s.h, s.w), out)
}

/// Per-pixel max across channels with first-channel tie-break.
pub(crate) fn channel_max(x: &Tensor4) -> (Tensor4, Vec<u32>) {
    let s = x.shape();
    let p = s.plane();
    let mut out = Vec::with_capacity(s.n * p);
    let mut arg = Vec::with_capacity(s.n * p);
    for n in 0..s.n {
        let item = x.item(n);
        for k in 0..p {
            let mut best = 0;
            for c in 1..s.c {
                if item[c * p + k] > item[best * p + k] {
                    best = c;
                }
            }
            out.push(item[best * p + k]);
            arg.push((n * s.item() + best * p + k) as u32);
        }
    }
    (Tensor4::from_parts(Shape::new(s.n, 1, s.h, s.w), out), arg)
}

/// Routes each upstream gradient to the recorded source index.
pub(crate) fn scatter_argmax(input_len: usize, argmax: &[u32], gout: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&idx, &g) in argmax.iter().zip(gout) {
        dx[idx as usize] += g;
    }
    dx
}
