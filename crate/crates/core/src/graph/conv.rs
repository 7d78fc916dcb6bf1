//! Convolution-family operations.
//!
//! Two layouts are in play: feature planes are [C,H,W] (channels outer, as the
//! plane decoder produces them), rendered images are [H,W,C] (pixels outer, as
//! the rasterizer composites them). Each op documents which it expects.

use super::{DiffOp, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Nearest-neighbor 2x upsampling of [C,H,W] → [C,2H,2W].
struct Upsample2x;

impl<T: Real> DiffOp<T> for Upsample2x {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 3, "upsample2x expects [C,H,W]");
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = Tensor::zeros([c, 2 * h, 2 * w]);
        let dst = out.data_mut();
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.data()[(ci * h + y) * w + xx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            dst[(ci * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx] = v;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (c, h, w) = (x[0].shape()[0], x[0].shape()[1], x[0].shape()[2]);
        let mut gx = Tensor::zeros([c, h, w]);
        let dst = gx.data_mut();
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += g.data()[(ci * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx];
                        }
                    }
                    dst[(ci * h + y) * w + xx] = acc;
                }
            }
        }
        vec![Some(gx)]
    }
}

/// 3x3 convolution with zero padding (same size): ([Cin,H,W], [Cout,Cin,3,3],
/// [Cout]) → [Cout,H,W].
struct Conv3x3;

impl<T: Real> DiffOp<T> for Conv3x3 {
    fn name(&self) -> &'static str {
        "conv3x3"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (inp, wgt, bias) = (x[0], x[1], x[2]);
        assert_eq!(inp.rank(), 3, "conv3x3 input [Cin,H,W]");
        let (cin, h, w) = (inp.shape()[0], inp.shape()[1], inp.shape()[2]);
        assert_eq!(wgt.shape()[1..], [cin, 3, 3], "conv3x3 weight [Cout,Cin,3,3]");
        let cout = wgt.shape()[0];
        assert_eq!(bias.shape(), &[cout]);

        let mut out = Tensor::zeros([cout, h, w]);
        let dst = out.data_mut();
        for co in 0..cout {
            let ob = co * h * w;
            dst[ob..ob + h * w].iter_mut().for_each(|v| *v = bias.data()[co]);
            for ci in 0..cin {
                let ib = ci * h * w;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let kv = wgt.data()[((co * cin + ci) * 3 + ky) * 3 + kx];
                        if kv == T::zero() {
                            continue;
                        }
                        // output(y,x) += kv * input(y+ky-1, x+kx-1)
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let x_lo = if kx == 0 { 1 } else { 0 };
                            let x_hi = if kx == 2 { w - 1 } else { w };
                            for xx in x_lo..x_hi {
                                let sx = xx + kx - 1;
                                dst[ob + y * w + xx] += kv * inp.data()[ib + sy * w + sx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (inp, wgt) = (x[0], x[1]);
        let (cin, h, w) = (inp.shape()[0], inp.shape()[1], inp.shape()[2]);
        let cout = wgt.shape()[0];

        let g_inp = needs[0].then(|| {
            let mut gi = Tensor::zeros([cin, h, w]);
            let dst = gi.data_mut();
            for co in 0..cout {
                let ob = co * h * w;
                for ci in 0..cin {
                    let ib = ci * h * w;
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let kv = wgt.data()[((co * cin + ci) * 3 + ky) * 3 + kx];
                            if kv == T::zero() {
                                continue;
                            }
                            for y in 0..h {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                let x_lo = if kx == 0 { 1 } else { 0 };
                                let x_hi = if kx == 2 { w - 1 } else { w };
                                for xx in x_lo..x_hi {
                                    let sx = xx + kx - 1;
                                    dst[ib + sy * w + sx] += kv * g.data()[ob + y * w + xx];
                                }
                            }
                        }
                    }
                }
            }
            gi
        });

        let g_wgt = needs[1].then(|| {
            let mut gw = Tensor::zeros(wgt.shape().to_vec());
            let dst = gw.data_mut();
            for co in 0..cout {
                let ob = co * h * w;
                for ci in 0..cin {
                    let ib = ci * h * w;
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let mut acc = T::zero();
                            for y in 0..h {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sy = sy as usize;
                                let x_lo = if kx == 0 { 1 } else { 0 };
                                let x_hi = if kx == 2 { w - 1 } else { w };
                                for xx in x_lo..x_hi {
                                    let sx = xx + kx - 1;
                                    acc += g.data()[ob + y * w + xx] * inp.data()[ib + sy * w + sx];
                                }
                            }
                            dst[((co * cin + ci) * 3 + ky) * 3 + kx] = acc;
                        }
                    }
                }
            }
            gw
        });

        let g_bias = needs[2].then(|| {
            let per: Vec<T> = (0..cout)
                .map(|co| g.data()[co * h * w..(co + 1) * h * w].iter().copied().sum())
                .collect();
            Tensor::from_vec([cout], per)
        });

        vec![g_inp, g_wgt, g_bias]
    }
}

/// Valid-region correlation of [H,W,C] with one fixed kh×kw kernel applied to
/// every channel independently → [H-kh+1, W-kw+1, C]. The kernel is data, not
/// a parameter (loss windows and finite-difference stencils).
struct DepthwiseValid<T> {
    kernel: Vec<T>,
    kh: usize,
    kw: usize,
}

impl<T: Real> DiffOp<T> for DepthwiseValid<T> {
    fn name(&self) -> &'static str {
        "depthwise_valid"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 3, "depthwise_valid expects [H,W,C]");
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert!(h >= self.kh && w >= self.kw, "kernel larger than image");
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let mut out = Tensor::zeros([oh, ow, c]);
        let dst = out.data_mut();
        for y in 0..oh {
            for xx in 0..ow {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let kv = self.kernel[ky * self.kw + kx];
                        let src = &x.data()[((y + ky) * w + xx + kx) * c..][..c];
                        let d = &mut dst[(y * ow + xx) * c..][..c];
                        for (o, &s) in d.iter_mut().zip(src) {
                            *o += kv * s;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (h, w, c) = (x[0].shape()[0], x[0].shape()[1], x[0].shape()[2]);
        let (oh, ow) = (out.shape()[0], out.shape()[1]);
        let mut gx = Tensor::zeros([h, w, c]);
        let dst = gx.data_mut();
        for y in 0..oh {
            for xx in 0..ow {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let kv = self.kernel[ky * self.kw + kx];
                        let grow = &g.data()[(y * ow + xx) * c..][..c];
                        let d = &mut dst[((y + ky) * w + xx + kx) * c..][..c];
                        for (o, &gv) in d.iter_mut().zip(grow) {
                            *o += kv * gv;
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// 2x2 average pooling of [H,W,C] with stride 2; odd trailing row/column is
/// cropped.
struct AvgPool2x2;

impl<T: Real> DiffOp<T> for AvgPool2x2 {
    fn name(&self) -> &'static str {
        "avgpool2x2"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 3, "avgpool2x2 expects [H,W,C]");
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oh, ow) = (h / 2, w / 2);
        assert!(oh > 0 && ow > 0, "avgpool2x2 needs at least 2x2 input");
        let quarter = T::from_f64c(0.25);
        let mut out = Tensor::zeros([oh, ow, c]);
        let dst = out.data_mut();
        for y in 0..oh {
            for xx in 0..ow {
                for ci in 0..c {
                    let mut acc = T::zero();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += x.data()[((2 * y + dy) * w + 2 * xx + dx) * c + ci];
                        }
                    }
                    dst[(y * ow + xx) * c + ci] = acc * quarter;
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (h, w, c) = (x[0].shape()[0], x[0].shape()[1], x[0].shape()[2]);
        let (oh, ow) = (out.shape()[0], out.shape()[1]);
        let quarter = T::from_f64c(0.25);
        let mut gx = Tensor::zeros([h, w, c]);
        let dst = gx.data_mut();
        for y in 0..oh {
            for xx in 0..ow {
                for ci in 0..c {
                    let gv = g.data()[(y * ow + xx) * c + ci] * quarter;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            dst[((2 * y + dy) * w + 2 * xx + dx) * c + ci] = gv;
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

impl<T: Real> Graph<T> {
    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        self.apply(Box::new(Upsample2x), &[x])
    }

    pub fn conv3x3(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        self.apply(Box::new(Conv3x3), &[x, weight, bias])
    }

    /// Correlate every channel of an [H,W,C] image with a fixed kh×kw kernel
    /// (valid region only).
    pub fn depthwise_valid(&mut self, x: NodeId, kernel: &[T], kh: usize, kw: usize) -> NodeId {
        assert_eq!(kernel.len(), kh * kw);
        self.apply(Box::new(DepthwiseValid { kernel: kernel.to_vec(), kh, kw }), &[x])
    }

    pub fn avgpool2x2(&mut self, x: NodeId) -> NodeId {
        self.apply(Box::new(AvgPool2x2), &[x])
    }
}
