//! Bilinear upsampling, align-corners=false with border clamping.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub(crate) fn check(input: Shape, out_h: usize, out_w: usize) -> Result<()> {
    if out_h < input.h || out_w < input.w {
        return Err(Error::invalid(
            "bilinear_upsample",
            format!("target {out_h}x{out_w} smaller than input {input}"),
        ));
    }
    Ok(())
}

pub(crate) fn upsample(x: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    let s = x.shape();
    check(s, out_h, out_w)?;
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            for ry in &ty {
                let r0 = &p[ry.lo * s.w..(ry.lo + 1) * s.w];
                let r1 = &p[ry.hi * s.w..(ry.hi + 1) * s.w];
                for rx in &tx {
                    // Lerp form keeps constant regions exactly constant.
                    let top = r0[rx.lo] + (r0[rx.hi] - r0[rx.lo]) * rx.frac;
                    let bottom = r1[rx.lo] + (r1[rx.hi] - r1[rx.lo]) * rx.frac;
                    out.push(top + (bottom - top) * ry.frac);
                }
            }
        }
    }
    Ok(Tensor4::from_parts(out_shape, out))
}

pub(crate) fn upsample_backward(input: Shape, gout: &Tensor4) -> Vec<f64> {
    let os = gout.shape();
    let ty = taps(input.h, os.h);
    let tx = taps(input.w, os.w);
    let mut dx = vec![0.0; input.len()];
    for n in 0..input.n {
        for c in 0..input.c {
            let base = (n * input.c + c) * input.plane();
            let g = gout.plane(n, c);
            for (oy, ry) in ty.iter().enumerate() {
                for (ox, rx) in tx.iter().enumerate() {
                    let v = g[oy * os.w + ox];
                    let (wy0, wy1) = (1.0 - ry.frac, ry.frac);
                    let (wx0, wx1) = (1.0 - rx.frac, rx.frac);
                    dx[base + ry.lo * input.w + rx.lo] += v * wy0 * wx0;
                    dx[base + ry.lo * input.w + rx.hi] += v * wy0 * wx1;
                    dx[base + ry.hi * input.w + rx.lo] += v * wy1 * wx0;
                    dx[base + ry.hi * input.w + rx.hi] += v * wy1 * wx1;
                }
            }
        }
    }
    dx
}
