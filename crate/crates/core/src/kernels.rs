//! Raw loops behind the tape primitives. All buffers are row-major NCHW.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Valid output column range for a horizontal tap offset `d` in {-1, 0, 1}.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { len - 1 } else { len };
    (lo, hi)
}

/// 3x3, stride 1, zero "same" padding.
pub(crate) fn conv3x3_forward(d: ConvDims, input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let plane = d.plane();
    let mut out = vec![0.0f32; d.n * d.cout * plane];
    out.par_chunks_mut(d.cout * plane)
        .zip(input.par_chunks(d.cin * plane))
        .for_each(|(out, inp)| {
            for co in 0..d.cout {
                let o_plane = &mut out[co * plane..(co + 1) * plane];
                o_plane.fill(bias[co]);
                for ci in 0..d.cin {
                    let i_plane = &inp[ci * plane..(ci + 1) * plane];
                    let k = &weight[(co * d.cin + ci) * 9..(co * d.cin + ci + 1) * 9];
                    for ky in 0..3 {
                        let dy = ky as isize - 1;
                        let (y0, y1) = span(d.h, dy);
                        for kx in 0..3 {
                            let dx = kx as isize - 1;
                            let (x0, x1) = span(d.w, dx);
                            let wv = k[ky * 3 + kx];
                            for y in y0..y1 {
                                let iy = (y as isize + dy) as usize;
                                let o = &mut o_plane[y * d.w + x0..y * d.w + x1];
                                let ix0 = (x0 as isize + dx) as usize;
                                let i = &i_plane[iy * d.w + ix0..iy * d.w + ix0 + (x1 - x0)];
                                for (ov, iv) in o.iter_mut().zip(i) {
                                    *ov += wv * iv;
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Returns (input gradient, weight gradient, bias gradient).
pub(crate) fn conv3x3_backward(
    d: ConvDims,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    need_input: bool,
    need_params: bool,
) -> (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>) {
    let plane = d.plane();
    let grad_in = need_input.then(|| {
        let mut gi = vec![0.0f32; d.n * d.cin * plane];
        gi.par_chunks_mut(d.cin * plane)
            .zip(grad_out.par_chunks(d.cout * plane))
            .for_each(|(gi, go)| {
                for co in 0..d.cout {
                    let g_plane = &go[co * plane..(co + 1) * plane];
                    for ci in 0..d.cin {
                        let gi_plane = &mut gi[ci * plane..(ci + 1) * plane];
                        let k = &weight[(co * d.cin + ci) * 9..(co * d.cin + ci + 1) * 9];
                        for ky in 0..3 {
                            let dy = ky as isize - 1;
                            let (y0, y1) = span(d.h, dy);
                            for kx in 0..3 {
                                let dx = kx as isize - 1;
                                let (x0, x1) = span(d.w, dx);
                                let wv = k[ky * 3 + kx];
                                for y in y0..y1 {
                                    let iy = (y as isize + dy) as usize;
                                    let g = &g_plane[y * d.w + x0..y * d.w + x1];
                                    let ix0 = (x0 as isize + dx) as usize;
                                    let t = &mut gi_plane[iy * d.w + ix0..iy * d.w + ix0 + (x1 - x0)];
                                    for (tv, gv) in t.iter_mut().zip(g) {
                                        *tv += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        gi
    });

    let grad_params = need_params.then(|| {
        // Per-sample partials reduced in sample order so the sum is deterministic.
        let partials: Vec<(Vec<f32>, Vec<f32>)> = input
            .par_chunks(d.cin * plane)
            .zip(grad_out.par_chunks(d.cout * plane))
            .map(|(inp, go)| {
                let mut gw = vec![0.0f32; d.cout * d.cin * 9];
                let mut gb = vec![0.0f32; d.cout];
                for co in 0..d.cout {
                    let g_plane = &go[co * plane..(co + 1) * plane];
                    gb[co] = g_plane.iter().sum();
                    for ci in 0..d.cin {
                        let i_plane = &inp[ci * plane..(ci + 1) * plane];
                        for ky in 0..3 {
                            let dy = ky as isize - 1;
                            let (y0, y1) = span(d.h, dy);
                            for kx in 0..3 {
                                let dx = kx as isize - 1;
                                let (x0, x1) = span(d.w, dx);
                                let mut acc = 0.0f32;
                                for y in y0..y1 {
                                    let iy = (y as isize + dy) as usize;
                                    let g = &g_plane[y * d.w + x0..y * d.w + x1];
                                    let ix0 = (x0 as isize + dx) as usize;
                                    let i = &i_plane[iy * d.w + ix0..iy * d.w + ix0 + (x1 - x0)];
                                    acc += g.iter().zip(i).map(|(a, b)| a * b).sum::<f32>();
                                }
                                gw[(co * d.cin + ci) * 9 + ky * 3 + kx] = acc;
                            }
                        }
                    }
                }
                (gw, gb)
            })
            .collect();
        let mut gw = vec![0.0f32; d.cout * d.cin * 9];
        let mut gb = vec![0.0f32; d.cout];
        for (pw, pb) in partials {
            gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
            gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
        }
        (gw, gb)
    });

    (grad_in, grad_params)
}

/// 2x2 max pool with stride 2. Ties go to the first (row-major lowest) index.
/// Returns pooled values and, per output cell, the winning flat index into the input.
pub(crate) fn maxpool2_forward(planes: usize, h: usize, w: usize, input: &[f32]) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; planes * oh * ow];
    let mut idx = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + (2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + y * ow + x;
                out[o] = input[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

/// `out[n, o] = bias[o] + sum_i weight[o, i] * input[n, i]`.
pub(crate) fn dense_forward(n: usize, fin: usize, fout: usize, input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; n * fout];
    out.par_chunks_mut(fout)
        .zip(input.par_chunks(fin))
        .for_each(|(o, x)| {
            for (j, ov) in o.iter_mut().enumerate() {
                let wr = &weight[j * fin..(j + 1) * fin];
                *ov = bias[j] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
            }
        });
    out
}

pub(crate) fn dense_backward(
    n: usize,
    fin: usize,
    fout: usize,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    need_input: bool,
    need_params: bool,
) -> (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>) {
    let gi = need_input.then(|| {
        let mut gi = vec![0.0f32; n * fin];
        gi.par_chunks_mut(fin)
            .zip(grad_out.par_chunks(fout))
            .for_each(|(gx, go)| {
                for (j, &g) in go.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let wr = &weight[j * fin..(j + 1) * fin];
                    gx.iter_mut().zip(wr).for_each(|(a, b)| *a += g * b);
                }
            });
        gi
    });
    let gp = need_params.then(|| {
        let mut gw = vec![0.0f32; fout * fin];
        let mut gb = vec![0.0f32; fout];
        gw.par_chunks_mut(fin).enumerate().for_each(|(j, gwr)| {
            for s in 0..n {
                let g = grad_out[s * fout + j];
                if g == 0.0 {
                    continue;
                }
                let x = &input[s * fin..(s + 1) * fin];
                gwr.iter_mut().zip(x).for_each(|(a, b)| *a += g * b);
            }
        });
        for s in 0..n {
            for j in 0..fout {
                gb[j] += grad_out[s * fout + j];
            }
        }
        (gw, gb)
    });
    (gi, gp)
}

pub(crate) fn softmax_rows(cols: usize, logits: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; logits.len()];
    for (o, z) in out.chunks_mut(cols).zip(logits.chunks(cols)) {
        let m = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0f64;
        for (ov, &zv) in o.iter_mut().zip(z) {
            let e = ((zv - m) as f64).exp();
            *ov = e as f32;
            s += e;
        }
        for ov in o.iter_mut() {
            *ov = (*ov as f64 / s) as f32;
        }
    }
    out
}
