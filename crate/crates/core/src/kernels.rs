//! Raw forward/backward loops over flat row-major buffers.
//!
//! Batch-parallel loops split work per sample with rayon; any reduction across
//! samples is folded sequentially in sample order so results do not depend on
//! thread scheduling.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    fn weight_len(&self) -> usize {
        self.out_channels * self.in_per_group() * self.kernel_h * self.kernel_w
    }
}

/// Output index range `[lo, hi)` whose input coordinate `o*stride + k - pad`
/// lands inside `[0, extent)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if extent + pad > k {
        ((extent - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let in_sample = g.in_channels * g.in_h * g.in_w;
    let out_sample = g.out_channels * oh_n * ow_n;
    let mut out = vec![0.0; g.batch * out_sample];
    out.par_chunks_mut(out_sample.max(1))
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = &x[n * in_sample..(n + 1) * in_sample];
            conv2d_sample(x_n, w, out_n, g);
        });
    out
}

fn conv2d_sample(x: &[f64], w: &[f64], out: &mut [f64], g: &ConvGeom) {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let plane = g.in_h * g.in_w;
    for oc in 0..g.out_channels {
        let grp = oc / cout_g;
        let out_plane = &mut out[oc * oh_n * ow_n..(oc + 1) * oh_n * ow_n];
        for icg in 0..cin_g {
            let ic = grp * cin_g + icg;
            let x_plane = &x[ic * plane..(ic + 1) * plane];
            for kh in 0..g.kernel_h {
                let (oh_lo, oh_hi) = valid_range(kh, g.padding, g.stride, g.in_h, oh_n);
                for kw in 0..g.kernel_w {
                    let wv = w[((oc * cin_g + icg) * g.kernel_h + kh) * g.kernel_w + kw];
                    let (ow_lo, ow_hi) = valid_range(kw, g.padding, g.stride, g.in_w, ow_n);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.stride + kh - g.padding;
                        let x_row = &x_plane[ih * g.in_w..(ih + 1) * g.in_w];
                        let o_row = &mut out_plane[oh * ow_n..(oh + 1) * ow_n];
                        for ow in ow_lo..ow_hi {
                            o_row[ow] += wv * x_row[ow * g.stride + kw - g.padding];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_backward_input(gy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let in_sample = g.in_channels * g.in_h * g.in_w;
    let out_sample = g.out_channels * oh_n * ow_n;
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let plane = g.in_h * g.in_w;
    let mut gx = vec![0.0; g.batch * in_sample];
    gx.par_chunks_mut(in_sample.max(1))
        .enumerate()
        .for_each(|(n, gx_n)| {
            let gy_n = &gy[n * out_sample..(n + 1) * out_sample];
            for oc in 0..g.out_channels {
                let grp = oc / cout_g;
                let gy_plane = &gy_n[oc * oh_n * ow_n..(oc + 1) * oh_n * ow_n];
                for icg in 0..cin_g {
                    let ic = grp * cin_g + icg;
                    let gx_plane = &mut gx_n[ic * plane..(ic + 1) * plane];
                    for kh in 0..g.kernel_h {
                        let (oh_lo, oh_hi) = valid_range(kh, g.padding, g.stride, g.in_h, oh_n);
                        for kw in 0..g.kernel_w {
                            let wv = w[((oc * cin_g + icg) * g.kernel_h + kh) * g.kernel_w + kw];
                            let (ow_lo, ow_hi) =
                                valid_range(kw, g.padding, g.stride, g.in_w, ow_n);
                            for oh in oh_lo..oh_hi {
                                let ih = oh * g.stride + kh - g.padding;
                                let gy_row = &gy_plane[oh * ow_n..(oh + 1) * ow_n];
                                let gx_row = &mut gx_plane[ih * g.in_w..(ih + 1) * g.in_w];
                                for ow in ow_lo..ow_hi {
                                    gx_row[ow * g.stride + kw - g.padding] += wv * gy_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        });
    gx
}

pub fn conv2d_backward_weight(gy: &[f64], x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let in_sample = g.in_channels * g.in_h * g.in_w;
    let out_sample = g.out_channels * oh_n * ow_n;
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let plane = g.in_h * g.in_w;
    let partials: Vec<Vec<f64>> = (0..g.batch)
        .into_par_iter()
        .map(|n| {
            let x_n = &x[n * in_sample..(n + 1) * in_sample];
            let gy_n = &gy[n * out_sample..(n + 1) * out_sample];
            let mut gw = vec![0.0; g.weight_len()];
            for oc in 0..g.out_channels {
                let grp = oc / cout_g;
                let gy_plane = &gy_n[oc * oh_n * ow_n..(oc + 1) * oh_n * ow_n];
                for icg in 0..cin_g {
                    let ic = grp * cin_g + icg;
                    let x_plane = &x_n[ic * plane..(ic + 1) * plane];
                    for kh in 0..g.kernel_h {
                        let (oh_lo, oh_hi) = valid_range(kh, g.padding, g.stride, g.in_h, oh_n);
                        for kw in 0..g.kernel_w {
                            let (ow_lo, ow_hi) =
                                valid_range(kw, g.padding, g.stride, g.in_w, ow_n);
                            let mut acc = 0.0;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * g.stride + kh - g.padding;
                                let gy_row = &gy_plane[oh * ow_n..(oh + 1) * ow_n];
                                let x_row = &x_plane[ih * g.in_w..(ih + 1) * g.in_w];
                                for ow in ow_lo..ow_hi {
                                    acc += gy_row[ow] * x_row[ow * g.stride + kw - g.padding];
                                }
                            }
                            gw[((oc * cin_g + icg) * g.kernel_h + kh) * g.kernel_w + kw] += acc;
                        }
                    }
                }
            }
            gw
        })
        .collect();
    sum_in_order(partials, g.weight_len())
}

fn sum_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in parts {
        total.iter_mut().zip(&p).for_each(|(t, v)| *t += v);
    }
    total
}

/// `y[n, o] = sum_d x[n, d] * w[o, d] + b[o]`.
pub fn linear_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, n: usize, d: usize, o: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * o];
    for i in 0..n {
        let xr = &x[i * d..(i + 1) * d];
        for j in 0..o {
            let wr = &w[j * d..(j + 1) * d];
            let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            y[i * o + j] = dot + b.map_or(0.0, |b| b[j]);
        }
    }
    y
}

pub fn avgpool_forward(x: &[f64], nc: usize, h: usize, w: usize, win: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = ((h - win) / stride + 1, (w - win) / stride + 1);
    let area = (win * win) as f64;
    let mut y = vec![0.0; nc * oh * ow];
    for p in 0..nc {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for a in 0..win {
                    for b in 0..win {
                        s += xp[(i * stride + a) * w + j * stride + b];
                    }
                }
                y[(p * oh + i) * ow + j] = s / area;
            }
        }
    }
    y
}

pub fn avgpool_backward(gy: &[f64], nc: usize, h: usize, w: usize, win: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = ((h - win) / stride + 1, (w - win) / stride + 1);
    let area = (win * win) as f64;
    let mut gx = vec![0.0; nc * h * w];
    for p in 0..nc {
        let gxp = &mut gx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = gy[(p * oh + i) * ow + j] / area;
                for a in 0..win {
                    for b in 0..win {
                        gxp[(i * stride + a) * w + j * stride + b] += g;
                    }
                }
            }
        }
    }
    gx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
