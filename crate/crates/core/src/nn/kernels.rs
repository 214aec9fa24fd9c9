//! Dense kernels on `[C, H, W]` buffers. Loop order is fixed so every
//! result is reproducible bit-for-bit.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output positions `o` whose input coordinate `o*stride + k - pad` lies
    /// inside `[0, size)`.
    fn valid(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= size-1
        let hi_num = size as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let hi = hi.min(out as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

pub(crate) fn conv2d(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut out = vec![0.0; g.out_ch * oh * ow];
    for o in 0..g.out_ch {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(b[o]);
        for c in 0..g.in_ch {
            let xin = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
            for ky in 0..k {
                let (y0, y1) = g.valid(ky, g.in_h, oh);
                for kx in 0..k {
                    let wv = w[((o * g.in_ch + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = g.valid(kx, g.in_w, ow);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &xin[iy * g.in_w..(iy + 1) * g.in_w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let base = kx as isize - g.pad as isize;
                            for ox in x0..x1 {
                                orow[ox] += wv * row[(ox as isize + base) as usize];
                            }
                        } else {
                            for ox in x0..x1 {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (grad_x, grad_w, grad_b).
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_ch];
    for o in 0..g.out_ch {
        let gplane = &gout[o * oh * ow..(o + 1) * oh * ow];
        gb[o] = gplane.iter().sum();
        for c in 0..g.in_ch {
            let base = c * g.in_h * g.in_w;
            for ky in 0..k {
                let (y0, y1) = g.valid(ky, g.in_h, oh);
                for kx in 0..k {
                    let widx = ((o * g.in_ch + c) * k + ky) * k + kx;
                    let wv = w[widx];
                    let (x0, x1) = g.valid(kx, g.in_w, ow);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        for ox in x0..x1 {
                            let ix = ox * g.stride + kx - g.pad;
                            let go = gplane[oy * ow + ox];
                            let xi = base + iy * g.in_w + ix;
                            acc += go * x[xi];
                            gx[xi] += wv * go;
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }
}

/// Max pooling; also returns the flat input index chosen for each output
/// (first maximum wins).
pub(crate) fn maxpool(x: &[f64], g: &PoolGeom) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.ch * oh * ow);
    let mut arg = Vec::with_capacity(g.ch * oh * ow);
    for c in 0..g.ch {
        let base = c * g.in_h * g.in_w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut bi = base;
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let i = base + (oy * g.stride + ky) * g.in_w + ox * g.stride + kx;
                        if x[i] > best {
                            best = x[i];
                            bi = i;
                        }
                    }
                }
                out.push(best);
                arg.push(bi);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(gout: &[f64], arg: &[usize], in_len: usize) -> Vec<f64> {
    let mut gx = vec![0.0; in_len];
    for (g, &i) in gout.iter().zip(arg) {
        gx[i] += g;
    }
    gx
}

pub(crate) fn avgpool(x: &[f64], g: &PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let norm = 1.0 / (g.kernel * g.kernel) as f64;
    let mut out = Vec::with_capacity(g.ch * oh * ow);
    for c in 0..g.ch {
        let base = c * g.in_h * g.in_w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..g.kernel {
                    let row = base + (oy * g.stride + ky) * g.in_w + ox * g.stride;
                    acc += x[row..row + g.kernel].iter().sum::<f64>();
                }
                out.push(acc * norm);
            }
        }
    }
    out
}

pub(crate) fn avgpool_backward(gout: &[f64], g: &PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let norm = 1.0 / (g.kernel * g.kernel) as f64;
    let mut gx = vec![0.0; g.ch * g.in_h * g.in_w];
    for c in 0..g.ch {
        let base = c * g.in_h * g.in_w;
        for oy in 0..oh {
            for ox in 0..ow {
                let v = gout[(c * oh + oy) * ow + ox] * norm;
                for ky in 0..g.kernel {
                    let row = base + (oy * g.stride + ky) * g.in_w + ox * g.stride;
                    for gxi in &mut gx[row..row + g.kernel] {
                        *gxi += v;
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn fc(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let row = &w[o * n..(o + 1) * n];
            bo + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn fc_backward(x: &[f64], w: &[f64], gout: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; w.len()];
    for (o, &go) in gout.iter().enumerate() {
        let row = &w[o * n..(o + 1) * n];
        let grow = &mut gw[o * n..(o + 1) * n];
        for i in 0..n {
            gx[i] += row[i] * go;
            grow[i] = go * x[i];
        }
    }
    (gx, gw, gout.to_vec())
}

/// Per-channel `scale * x + shift`; `plane` is the number of elements per channel.
pub(crate) fn affine(x: &[f64], scale: &[f64], shift: &[f64], plane: usize) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            scale[c] * v + shift[c]
        })
        .collect()
}

pub(crate) fn affine_backward(
    x: &[f64],
    scale: &[f64],
    gout: &[f64],
    plane: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gs = vec![0.0; scale.len()];
    let mut gt = vec![0.0; scale.len()];
    let gx = gout
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let c = i / plane;
            gs[c] += g * x[i];
            gt[c] += g;
            scale[c] * g
        })
        .collect();
    (gx, gs, gt)
}

pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn relu_backward(x: &[f64], gout: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(gout)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn conv_naive(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
        let mut out = vec![0.0; g.out_ch * oh * ow];
        for o in 0..g.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..g.in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                acc += w[((o * g.in_ch + c) * k + ky) * k + kx]
                                    * x[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_definition() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (2, 1, 0), (3, 1, 2), (5, 3, 1)] {
            let g = ConvGeom { in_ch: 2, in_h: 7, in_w: 6, out_ch: 3, kernel: k, stride: s, pad: p };
            let x: Vec<f64> = (0..2 * 7 * 6).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let w: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 104_729) % 11) as f64 - 5.0).collect();
            let b = vec![0.5, -1.0, 2.0];
            assert_eq!(conv2d(&x, &w, &b, &g), conv_naive(&x, &w, &b, &g), "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn pooling_basics() {
        let g = PoolGeom { ch: 1, in_h: 2, in_w: 2, kernel: 2, stride: 2 };
        let (m, arg) = maxpool(&[1.0, 4.0, 3.0, 2.0], &g);
        assert_eq!(m, vec![4.0]);
        assert_eq!(arg, vec![1]);
        assert_eq!(avgpool(&[1.0, 4.0, 3.0, 2.0], &g), vec![2.5]);
        assert_eq!(avgpool_backward(&[4.0], &g), vec![1.0; 4]);
    }
}
