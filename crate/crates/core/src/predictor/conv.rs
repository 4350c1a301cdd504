//! 2D convolution with sphere-aware padding, written for both forward and
//! reverse passes.
//!
//! The projected images live on an azimuth x polar rectangle whose row
//! seam is physically continuous (0 and 2*pi meet) while its columns end
//! at the poles, so padding wraps along rows and reflects along columns.
//! Padding is realized by index mapping instead of materialized borders;
//! the stride-1 inner loops split off the interior span so the hot path
//! runs over contiguous slices.

use crate::error::{Error, Result};
use crate::tensor::{Image, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisPad {
    /// Periodic axis: index -1 reads the last element.
    Wrap,
    /// Mirrored axis without repeating the edge: index -1 reads element 1.
    Reflect,
}

/// Map a possibly out-of-range index onto [0, n).
#[inline]
pub fn map_index(i: i64, n: usize, pad: AxisPad) -> usize {
    if n == 1 {
        return 0;
    }
    let n_i = n as i64;
    match pad {
        AxisPad::Wrap => i.rem_euclid(n_i) as usize,
        AxisPad::Reflect => {
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i;
                } else if i >= n_i {
                    i = 2 * n_i - 2 - i;
                } else {
                    return i as usize;
                }
            }
        }
    }
}

/// Grouped, dilatable 2D convolution with bias.
///
/// Weights are laid out [out_ch][in_ch/groups][k][k]. Output spatial dims
/// are ceil(in/stride), anchored so output position o reads input
/// positions o*stride + (kt - k/2)*dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Conv2d<T>> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::invalid(format!("kernel size {k} must be odd")));
        }
        if groups == 0 || in_ch % groups != 0 || out_ch % groups != 0 {
            return Err(Error::invalid(format!(
                "channels {in_ch}->{out_ch} not divisible into {groups} groups"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid("stride and dilation must be at least 1"));
        }
        let weight = vec![T::zero(); out_ch * (in_ch / groups) * k * k];
        let bias = vec![T::zero(); out_ch];
        Ok(Conv2d { in_ch, out_ch, k, stride, dilation, groups, weight, bias })
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + self.stride - 1) / self.stride, (w + self.stride - 1) / self.stride)
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    /// Fan-in per output unit, the Kaiming initialization denominator.
    pub fn fan_in(&self) -> usize {
        (self.in_ch / self.groups) * self.k * self.k
    }

    #[inline]
    fn weight_at(&self, oc: usize, icg: usize, ky: usize, kx: usize) -> T {
        self.weight[((oc * (self.in_ch / self.groups) + icg) * self.k + ky) * self.k + kx]
    }

    pub fn forward(&self, x: &Image<T>, pad_y: AxisPad, pad_x: AxisPad) -> Result<Image<T>> {
        if x.channels() != self.in_ch {
            return Err(Error::invalid(format!(
                "convolution expects {} input channels, image has {}",
                self.in_ch,
                x.channels()
            )));
        }
        let (h, w) = x.spatial();
        let (oh, ow) = self.out_spatial(h, w);
        let mut y = Image::zeros(self.out_ch, oh, ow);
        let icpg = self.in_ch / self.groups;
        let ocpg = self.out_ch / self.groups;
        let center = (self.k / 2 * self.dilation) as i64;
        for oc in 0..self.out_ch {
            let g = oc / ocpg;
            for oy in 0..oh {
                y.row_mut(oc, oy).fill(self.bias[oc]);
            }
            for icg in 0..icpg {
                let ic = g * icpg + icg;
                for ky in 0..self.k {
                    let dy = (ky * self.dilation) as i64 - center;
                    for oy in 0..oh {
                        let my = map_index((oy * self.stride) as i64 + dy, h, pad_y);
                        for kx in 0..self.k {
                            let wv = self.weight_at(oc, icg, ky, kx);
                            let dx = (kx * self.dilation) as i64 - center;
                            let xrow = x.row(ic, my);
                            let yrow = y.row_mut(oc, oy);
                            if self.stride == 1 {
                                let lo = (((-dx).max(0)) as usize).min(ow);
                                let hi = (w as i64 - dx).clamp(lo as i64, ow as i64) as usize;
                                for ox in 0..lo {
                                    let mx = map_index(ox as i64 + dx, w, pad_x);
                                    yrow[ox] += wv * xrow[mx];
                                }
                                if lo < hi {
                                    let base = (lo as i64 + dx) as usize;
                                    let xs = &xrow[base..base + (hi - lo)];
                                    for (yv, xv) in yrow[lo..hi].iter_mut().zip(xs) {
                                        *yv += wv * *xv;
                                    }
                                }
                                for ox in hi..ow {
                                    let mx = map_index(ox as i64 + dx, w, pad_x);
                                    yrow[ox] += wv * xrow[mx];
                                }
                            } else {
                                for ox in 0..ow {
                                    let mx =
                                        map_index((ox * self.stride) as i64 + dx, w, pad_x);
                                    yrow[ox] += wv * xrow[mx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Reverse pass. Accumulates weight and bias gradients into `gw`/`gb`
    /// (callers zero or carry them across a batch) and returns the input
    /// gradient. `x` must be the forward input, `gy` the output gradient.
    pub fn backward(
        &self,
        x: &Image<T>,
        gy: &Image<T>,
        pad_y: AxisPad,
        pad_x: AxisPad,
        gw: &mut [T],
        gb: &mut [T],
    ) -> Image<T> {
        let (h, w) = x.spatial();
        let (oh, ow) = self.out_spatial(h, w);
        debug_assert_eq!(gy.spatial(), (oh, ow));
        debug_assert_eq!(gw.len(), self.weight.len());
        debug_assert_eq!(gb.len(), self.bias.len());
        let mut gx = Image::zeros(self.in_ch, h, w);
        let icpg = self.in_ch / self.groups;
        let ocpg = self.out_ch / self.groups;
        let center = (self.k / 2 * self.dilation) as i64;
        for oc in 0..self.out_ch {
            let g = oc / ocpg;
            for oy in 0..oh {
                let mut s = T::zero();
                for v in gy.row(oc, oy) {
                    s += *v;
                }
                gb[oc] += s;
            }
            for icg in 0..icpg {
                let ic = g * icpg + icg;
                for ky in 0..self.k {
                    let dy = (ky * self.dilation) as i64 - center;
                    for oy in 0..oh {
                        let my = map_index((oy * self.stride) as i64 + dy, h, pad_y);
                        for kx in 0..self.k {
                            let wv = self.weight_at(oc, icg, ky, kx);
                            let wi =
                                ((oc * icpg + icg) * self.k + ky) * self.k + kx;
                            let dx = (kx * self.dilation) as i64 - center;
                            let gyrow = gy.row(oc, oy);
                            let xrow = x.row(ic, my);
                            let mut wacc = T::zero();
                            if self.stride == 1 {
                                let lo = (((-dx).max(0)) as usize).min(ow);
                                let hi = (w as i64 - dx).clamp(lo as i64, ow as i64) as usize;
                                let gxrow = gx.row_mut(ic, my);
                                for ox in 0..lo {
                                    let mx = map_index(ox as i64 + dx, w, pad_x);
                                    wacc += gyrow[ox] * xrow[mx];
                                    gxrow[mx] += wv * gyrow[ox];
                                }
                                if lo < hi {
                                    let base = (lo as i64 + dx) as usize;
                                    for (i, gv) in gyrow[lo..hi].iter().enumerate() {
                                        wacc += *gv * xrow[base + i];
                                        gxrow[base + i] += wv * *gv;
                                    }
                                }
                                for ox in hi..ow {
                                    let mx = map_index(ox as i64 + dx, w, pad_x);
                                    wacc += gyrow[ox] * xrow[mx];
                                    gxrow[mx] += wv * gyrow[ox];
                                }
                            } else {
                                let gxrow = gx.row_mut(ic, my);
                                for ox in 0..ow {
                                    let mx =
                                        map_index((ox * self.stride) as i64 + dx, w, pad_x);
                                    wacc += gyrow[ox] * xrow[mx];
                                    gxrow[mx] += wv * gyrow[ox];
                                }
                            }
                            gw[wi] += wacc;
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Nearest-neighbor 2x upsampling onto an explicit target size, which also
/// handles the crop when the encoder dimension was odd (e.g. 15 -> 8 down,
/// 8 -> 15 back up).
pub fn upsample_nearest_to<T: Scalar>(x: &Image<T>, th: usize, tw: usize) -> Result<Image<T>> {
    let (h, w) = x.spatial();
    if th > 2 * h || tw > 2 * w || th < h || tw < w {
        return Err(Error::invalid(format!(
            "upsample target {th}x{tw} out of range for input {h}x{w}"
        )));
    }
    let mut y = Image::zeros(x.channels(), th, tw);
    for c in 0..x.channels() {
        for oy in 0..th {
            let src = x.row(c, oy / 2);
            let dst = y.row_mut(c, oy);
            for (ox, v) in dst.iter_mut().enumerate() {
                *v = src[ox / 2];
            }
        }
    }
    Ok(y)
}

/// Scatter-add counterpart of [`upsample_nearest_to`].
pub fn upsample_nearest_backward<T: Scalar>(gy: &Image<T>, h: usize, w: usize) -> Image<T> {
    let th = gy.height();
    let mut gx = Image::zeros(gy.channels(), h, w);
    for c in 0..gy.channels() {
        for oy in 0..th {
            let src = gy.row(c, oy);
            let dst = gx.row_mut(c, oy / 2);
            for (ox, v) in src.iter().enumerate() {
                dst[ox / 2] += *v;
            }
        }
    }
    gx
}

/// In-place rectifier.
pub fn relu_inplace<T: Scalar>(x: &mut Image<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the stored activation was clamped. Post-relu
/// activations are enough to recover the mask: the output is positive
/// exactly where the input was.
pub fn relu_backward_inplace<T: Scalar>(g: &mut Image<T>, activated: &Image<T>) {
    for (gv, av) in g.data_mut().iter_mut().zip(activated.data()) {
        if *av <= T::zero() {
            *gv = T::zero();
        }
    }
}
