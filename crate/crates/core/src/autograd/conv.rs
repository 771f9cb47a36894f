//! 2-D convolution kernels (NCHW, square kernels, symmetric zero padding).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        wt: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return Err(Error::Shape(format!("conv2d expects 4-d input and weight, got {x:?} and {wt:?}")));
        }
        let (n, cin, h, w) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kh, kw) = (wt[0], wt[1], wt[2], wt[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::Shape(format!(
                "conv2d: {cin} input channels, weight {wt:?}, groups {groups}"
            )));
        }
        if kh != kw || stride == 0 {
            return Err(Error::Shape(format!("conv2d: unsupported kernel {kh}x{kw} stride {stride}")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!("conv2d: kernel {kh} larger than padded input {h}x{w}")));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            groups,
            ho,
            wo,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.cin && self.groups == self.cout
    }
}

/// Unfold the input channels of group `g` of one sample into `[cin_g*k*k, ho*wo]`.
fn im2col<T: Scalar>(x: &[T], geo: &ConvGeom, g: usize, cols: &mut [T]) {
    let cin_g = geo.cin_g();
    let (k, s, p) = (geo.k, geo.stride, geo.pad as isize);
    let hw_out = geo.ho * geo.wo;
    for ci in 0..cin_g {
        let plane = &x[(g * cin_g + ci) * geo.h * geo.w..][..geo.h * geo.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw_out..][..hw_out];
                for oy in 0..geo.ho {
                    let iy = (oy * s + ky) as isize - p;
                    let out = &mut row[oy * geo.wo..(oy + 1) * geo.wo];
                    if iy < 0 || iy >= geo.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * geo.w..][..geo.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *o = if ix < 0 || ix >= geo.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], geo: &ConvGeom, g: usize, dx: &mut [T]) {
    let cin_g = geo.cin_g();
    let (k, s, p) = (geo.k, geo.stride, geo.pad as isize);
    let hw_out = geo.ho * geo.wo;
    for ci in 0..cin_g {
        let plane = &mut dx[(g * cin_g + ci) * geo.h * geo.w..][..geo.h * geo.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw_out..][..hw_out];
                for oy in 0..geo.ho {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= geo.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * geo.w..][..geo.w];
                    for ox in 0..geo.wo {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < geo.w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * geo.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let geo = ConvGeom::new(x.shape(), wt.shape(), stride, pad, groups)?;
    let mut y = Tensor::zeros(&[geo.n, geo.cout, geo.ho, geo.wo]);
    if geo.is_depthwise() {
        depthwise_forward(x.data(), wt.data(), &geo, y.data_mut());
        return Ok(y);
    }
    let (cin_g, cout_g) = (geo.cin_g(), geo.cout_g());
    let kk = cin_g * geo.k * geo.k;
    let hw_out = geo.ho * geo.wo;
    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * hw_out]
    };
    let in_len = geo.cin * geo.h * geo.w;
    let out_len = geo.cout * hw_out;
    for n in 0..geo.n {
        let xn = &x.data()[n * in_len..][..in_len];
        let yn = &mut y.data_mut()[n * out_len..][..out_len];
        for g in 0..geo.groups {
            let src: &[T] = if geo.is_pointwise() {
                &xn[g * cin_g * hw_out..][..cin_g * hw_out]
            } else {
                im2col(xn, &geo, g, &mut cols);
                &cols
            };
            let wg = &wt.data()[g * cout_g * kk..][..cout_g * kk];
            let yg = &mut yn[g * cout_g * hw_out..][..cout_g * hw_out];
            T::gemm(
                cout_g,
                kk,
                hw_out,
                T::one(),
                wg,
                kk as isize,
                1,
                src,
                hw_out as isize,
                1,
                T::zero(),
                yg,
                hw_out as isize,
                1,
            );
        }
    }
    Ok(y)
}

/// Gradients with respect to the input and the weight; each is computed only when requested.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    groups: usize,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let geo = ConvGeom::new(x.shape(), wt.shape(), stride, pad, groups)?;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(wt.shape()));
    if geo.is_depthwise() {
        depthwise_backward(
            x.data(),
            wt.data(),
            gy.data(),
            &geo,
            dx.as_mut().map(|t| t.data_mut()),
            dw.as_mut().map(|t| t.data_mut()),
        );
        return Ok((dx, dw));
    }
    let (cin_g, cout_g) = (geo.cin_g(), geo.cout_g());
    let kk = cin_g * geo.k * geo.k;
    let hw_out = geo.ho * geo.wo;
    let in_len = geo.cin * geo.h * geo.w;
    let out_len = geo.cout * hw_out;
    let mut cols = vec![T::zero(); kk * hw_out];
    let mut dcols = vec![T::zero(); kk * hw_out];
    for n in 0..geo.n {
        let xn = &x.data()[n * in_len..][..in_len];
        let gyn = &gy.data()[n * out_len..][..out_len];
        for g in 0..geo.groups {
            let gyg = &gyn[g * cout_g * hw_out..][..cout_g * hw_out];
            let wg = &wt.data()[g * cout_g * kk..][..cout_g * kk];
            if let Some(dw) = dw.as_mut() {
                let src: &[T] = if geo.is_pointwise() {
                    &xn[g * cin_g * hw_out..][..cin_g * hw_out]
                } else {
                    im2col(xn, &geo, g, &mut cols);
                    &cols
                };
                // dW_g += gy_g [cout_g, hw] * cols^T [hw, kk]
                let dwg = &mut dw.data_mut()[g * cout_g * kk..][..cout_g * kk];
                T::gemm(
                    cout_g,
                    hw_out,
                    kk,
                    T::one(),
                    gyg,
                    hw_out as isize,
                    1,
                    src,
                    1,
                    hw_out as isize,
                    T::one(),
                    dwg,
                    kk as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx.data_mut()[n * in_len..][..in_len];
                if geo.is_pointwise() {
                    let dst = &mut dxn[g * cin_g * hw_out..][..cin_g * hw_out];
                    T::gemm(
                        kk,
                        cout_g,
                        hw_out,
                        T::one(),
                        wg,
                        1,
                        kk as isize,
                        gyg,
                        hw_out as isize,
                        1,
                        T::one(),
                        dst,
                        hw_out as isize,
                        1,
                    );
                } else {
                    // dcols = W_g^T [kk, cout_g] * gy_g [cout_g, hw]
                    T::gemm(
                        kk,
                        cout_g,
                        hw_out,
                        T::one(),
                        wg,
                        1,
                        kk as isize,
                        gyg,
                        hw_out as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        hw_out as isize,
                        1,
                    );
                    col2im_add(&dcols, &geo, g, dxn);
                }
            }
        }
    }
    Ok((dx, dw))
}

fn depthwise_forward<T: Scalar>(x: &[T], wt: &[T], geo: &ConvGeom, y: &mut [T]) {
    let (k, s, p) = (geo.k, geo.stride, geo.pad as isize);
    for n in 0..geo.n {
        for c in 0..geo.cin {
            let plane = &x[(n * geo.cin + c) * geo.h * geo.w..][..geo.h * geo.w];
            let kern = &wt[c * k * k..][..k * k];
            let out = &mut y[(n * geo.cout + c) * geo.ho * geo.wo..][..geo.ho * geo.wo];
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= geo.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p;
                            if ix < 0 || ix >= geo.w as isize {
                                continue;
                            }
                            acc = acc + kern[ky * k + kx] * plane[iy as usize * geo.w + ix as usize];
                        }
                    }
                    out[oy * geo.wo + ox] = acc;
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gy: &[T],
    geo: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (k, s, p) = (geo.k, geo.stride, geo.pad as isize);
    for n in 0..geo.n {
        for c in 0..geo.cin {
            let base_in = (n * geo.cin + c) * geo.h * geo.w;
            let plane = &x[base_in..][..geo.h * geo.w];
            let kern = &wt[c * k * k..][..k * k];
            let g = &gy[(n * geo.cout + c) * geo.ho * geo.wo..][..geo.ho * geo.wo];
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let go = g[oy * geo.wo + ox];
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= geo.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p;
                            if ix < 0 || ix >= geo.w as isize {
                                continue;
                            }
                            let idx = iy as usize * geo.w + ix as usize;
                            if let Some(dw) = dw.as_deref_mut() {
                                let j = c * k * k + ky * k + kx;
                                dw[j] = dw[j] + go * plane[idx];
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[base_in + idx] = dx[base_in + idx] + go * kern[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop reference.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
        let geo = ConvGeom::new(x.shape(), w.shape(), stride, pad, groups).unwrap();
        let (cin_g, cout_g) = (geo.cin / groups, geo.cout / groups);
        let mut y = Tensor::zeros(&[geo.n, geo.cout, geo.ho, geo.wo]);
        for n in 0..geo.n {
            for co in 0..geo.cout {
                let g = co / cout_g;
                for oy in 0..geo.ho {
                    for ox in 0..geo.wo {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            for ky in 0..geo.k {
                                for kx in 0..geo.k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= geo.h as isize || ix >= geo.w as isize {
                                        continue;
                                    }
                                    let xi = ((n * geo.cin + g * cin_g + ci) * geo.h + iy as usize) * geo.w + ix as usize;
                                    let wi = ((co * cin_g + ci) * geo.k + ky) * geo.k + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        y.data_mut()[((n * geo.cout + co) * geo.ho + oy) * geo.wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(shape: &[usize], phase: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * 0.37 + phase).sin()).collect()).unwrap()
    }

    #[test]
    fn matches_reference_for_all_paths() {
        for &(cin, cout, k, stride, pad, groups) in &[
            (3, 4, 3, 2, 1, 1),
            (4, 6, 1, 1, 0, 1),
            (4, 4, 3, 1, 1, 4),
            (4, 6, 3, 1, 1, 2),
            (2, 3, 3, 1, 0, 1),
        ] {
            let x = ramp(&[2, cin, 5, 6], 0.1);
            let w = ramp(&[cout, cin / groups, k, k], 0.7);
            let y = forward(&x, &w, stride, pad, groups).unwrap();
            let r = naive(&x, &w, stride, pad, groups);
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x, w), gy> is bilinear, so <dx, x> = <dw, w> = <y, gy>.
        for &(cin, cout, k, stride, pad, groups) in &[
            (3, 4, 3, 2, 1, 1),
            (4, 6, 1, 1, 0, 1),
            (4, 4, 3, 1, 1, 4),
            (4, 6, 3, 1, 1, 2),
        ] {
            let x = ramp(&[2, cin, 6, 6], 0.3);
            let w = ramp(&[cout, cin / groups, k, k], 1.1);
            let y = forward(&x, &w, stride, pad, groups).unwrap();
            let gy = ramp(y.shape(), 2.0);
            let (dx, dw) = backward(&x, &w, &gy, stride, pad, groups, true, true).unwrap();
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
            let target = dot(&y, &gy);
            assert!((dot(&dx.unwrap(), &x) - target).abs() < 1e-9);
            assert!((dot(&dw.unwrap(), &w) - target).abs() < 1e-9);
        }
    }
}
