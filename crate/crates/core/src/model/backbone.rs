//! Toy convolutional backbone: 3×3 same-padding convolution, pointwise
//! nonlinearity, 2×2 average pooling. 3D maps are processed frame by frame.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::gcn::Activation;
use crate::lateral::FeatureMap;
use crate::{Error, Matrix, Result};

const K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneStage {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Halve the spatial resolution after the nonlinearity.
    pub downsample: bool,
}

/// Intermediates of one stage for a single sample.
#[derive(Debug, Clone)]
pub struct StageCache {
    pub input: FeatureMap,
    pub pre_activation: FeatureMap,
}

impl BackboneStage {
    pub fn he_init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, activation: Activation, rng: &mut R) -> Self {
        let fan_in = in_channels * K * K;
        let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("finite std");
        let weight = (0..out_channels * fan_in).map(|_| normal.sample(rng)).collect();
        BackboneStage { in_channels, out_channels, weight, bias: vec![0.0; out_channels], activation, downsample: true }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.forward_cached(x).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, x: &FeatureMap) -> Result<(FeatureMap, StageCache)> {
        if x.channels() != self.in_channels {
            return Err(Error::shape("BackboneStage::forward", format!("input has {} channels, stage expects {}", x.channels(), self.in_channels)));
        }
        if self.downsample && (x.height() % 2 != 0 || x.width() % 2 != 0) {
            return Err(Error::shape("BackboneStage::forward", format!("{}x{} cannot be halved", x.height(), x.width())));
        }
        let pre = conv3x3(x, &self.weight, &self.bias, self.out_channels);
        let act = self.activation;
        let activated = map(&pre, |v| act.apply(v));
        let out = if self.downsample { avg_pool2(&activated) } else { activated };
        Ok((out, StageCache { input: x.clone(), pre_activation: pre }))
    }

    /// Returns `(∂L/∂input, ∂L/∂weight, ∂L/∂bias)`. The input gradient is
    /// skipped when `need_input_grad` is false.
    pub fn backward(&self, cache: &StageCache, grad_out: &FeatureMap, need_input_grad: bool) -> (Option<FeatureMap>, Vec<f64>, Vec<f64>) {
        let grad_act = if self.downsample { avg_pool2_backward(grad_out) } else { grad_out.clone() };
        let act = self.activation;
        let mut grad_pre = grad_act;
        for (g, &z) in grad_pre.data_mut().iter_mut().zip(cache.pre_activation.data()) {
            *g *= act.derivative(z);
        }
        conv3x3_backward(&cache.input, &self.weight, &grad_pre, need_input_grad)
    }
}

fn map(x: &FeatureMap, f: impl Fn(f64) -> f64) -> FeatureMap {
    let (c, t, h, w) = x.dims();
    FeatureMap::from_parts_unchecked(c, t, h, w, x.data().iter().map(|&v| f(v)).collect())
}

/// Transposed patch matrix of frame `f`: row `(oy, ox)`, column
/// `(ci, ky, kx)`, holding the zero-padded input at `(oy + ky − 1, ox + kx − 1)`.
fn patches(x: &FeatureMap, f: usize) -> Matrix {
    let (cin, frames, h, w) = x.dims();
    let t = frames.unwrap_or(1);
    let plane = h * w;
    let width = cin * K * K;
    let input = x.data();
    let mut cols = Matrix::zeros(plane, width);
    let data = cols.as_mut_slice();
    for ci in 0..cin {
        let src = &input[(ci * t + f) * plane..(ci * t + f + 1) * plane];
        for oy in 0..h {
            for ky in 0..K {
                let iy = oy + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                for ox in 0..w {
                    let base = (oy * w + ox) * width + (ci * K + ky) * K;
                    for kx in 0..K {
                        let ix = ox + kx;
                        if ix >= 1 && ix <= w {
                            data[base + kx] = src[(iy - 1) * w + ix - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`patches`]: accumulates patch gradients into frame `f` of `out`.
fn patches_adjoint_add(cols: &Matrix, f: usize, t: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    let width = cols.cols();
    let cin = width / (K * K);
    let data = cols.as_slice();
    for ci in 0..cin {
        let dst = &mut out[(ci * t + f) * plane..(ci * t + f + 1) * plane];
        for oy in 0..h {
            for ky in 0..K {
                let iy = oy + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                for ox in 0..w {
                    let base = (oy * w + ox) * width + (ci * K + ky) * K;
                    for kx in 0..K {
                        let ix = ox + kx;
                        if ix >= 1 && ix <= w {
                            dst[(iy - 1) * w + ix - 1] += data[base + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Same-padding 3×3 convolution applied to each frame independently.
pub fn conv3x3(x: &FeatureMap, weight: &[f64], bias: &[f64], out_channels: usize) -> FeatureMap {
    let (cin, frames, h, w) = x.dims();
    let t = frames.unwrap_or(1);
    let plane = h * w;
    let wm = Matrix::from_vec(out_channels, cin * K * K, weight.to_vec()).expect("weight length");
    let mut out = vec![0.0; out_channels * t * plane];
    for f in 0..t {
        let y = wm.matmul_t(&patches(x, f)).expect("patch shape");
        for co in 0..out_channels {
            for (o, &v) in out[(co * t + f) * plane..(co * t + f + 1) * plane].iter_mut().zip(y.row(co)) {
                *o = v + bias[co];
            }
        }
    }
    FeatureMap::from_parts_unchecked(out_channels, frames, h, w, out)
}

pub fn conv3x3_backward(
    x: &FeatureMap,
    weight: &[f64],
    grad_out: &FeatureMap,
    need_input_grad: bool,
) -> (Option<FeatureMap>, Vec<f64>, Vec<f64>) {
    let (cin, frames, h, w) = x.dims();
    let t = frames.unwrap_or(1);
    let cout = grad_out.channels();
    let plane = h * w;
    let g = grad_out.data();
    let wm = Matrix::from_vec(cout, cin * K * K, weight.to_vec()).expect("weight length");
    let mut grad_w = Matrix::zeros(cout, cin * K * K);
    let mut grad_b = vec![0.0; cout];
    let mut grad_x = if need_input_grad { vec![0.0; x.data().len()] } else { Vec::new() };
    for f in 0..t {
        let gf = Matrix::from_fn(cout, plane, |co, p| g[(co * t + f) * plane + p]);
        for (b, s) in grad_b.iter_mut().zip(gf.row_sums()) {
            *b += s;
        }
        let gw = gf.matmul(&patches(x, f)).expect("patch shape");
        for (acc, v) in grad_w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *acc += v;
        }
        if need_input_grad {
            let gc = gf.t_matmul(&wm).expect("patch shape");
            patches_adjoint_add(&gc, f, t, h, w, &mut grad_x);
        }
    }
    let grad_x = need_input_grad.then(|| FeatureMap::from_parts_unchecked(cin, frames, h, w, grad_x));
    (grad_x, grad_w.into_vec(), grad_b)
}

/// 2×2 mean pooling with stride 2 on every frame. Height and width must be even.
pub fn avg_pool2(x: &FeatureMap) -> FeatureMap {
    let (c, frames, h, w) = x.dims();
    let t = frames.unwrap_or(1);
    let (oh, ow) = (h / 2, w / 2);
    let input = x.data();
    let mut out = vec![0.0; c * t * oh * ow];
    for p in 0..c * t {
        let i_base = p * h * w;
        let o_base = p * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = i_base + 2 * oy * w + 2 * ox;
                out[o_base + oy * ow + ox] = 0.25 * (input[i] + input[i + 1] + input[i + w] + input[i + w + 1]);
            }
        }
    }
    FeatureMap::from_parts_unchecked(c, frames, oh, ow, out)
}

pub fn avg_pool2_backward(grad_out: &FeatureMap) -> FeatureMap {
    let (c, frames, oh, ow) = grad_out.dims();
    let t = frames.unwrap_or(1);
    let (h, w) = (oh * 2, ow * 2);
    let g = grad_out.data();
    let mut out = vec![0.0; c * t * h * w];
    for p in 0..c * t {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = 0.25 * g[p * oh * ow + oy * ow + ox];
                let i = p * h * w + 2 * oy * w + 2 * ox;
                out[i] = v;
                out[i + 1] = v;
                out[i + w] = v;
                out[i + w + 1] = v;
            }
        }
    }
    FeatureMap::from_parts_unchecked(c, frames, h, w, out)
}

/// Mean over all locations of each channel.
pub fn global_average_pool(x: &FeatureMap) -> Vec<f64> {
    let s = x.locations() as f64;
    (0..x.channels()).map(|c| x.channel(c).iter().sum::<f64>() / s).collect()
}

pub fn global_average_pool_backward(grad: &[f64], like: &FeatureMap) -> FeatureMap {
    let (c, t, h, w) = like.dims();
    let s = like.locations();
    let mut data = Vec::with_capacity(c * s);
    for &g in grad {
        data.extend(core::iter::repeat_n(g / s as f64, s));
    }
    FeatureMap::from_parts_unchecked(c, t, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit zero padding.
    fn conv_oracle(x: &FeatureMap, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
        let (cin, frames, h, w) = x.dims();
        let t = frames.unwrap_or(1);
        let at = |ci: usize, f: usize, y: isize, xx: isize| -> f64 {
            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                0.0
            } else {
                x.data()[((ci * t + f) * h + y as usize) * w + xx as usize]
            }
        };
        let mut out = Vec::new();
        for co in 0..cout {
            for f in 0..t {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                                    acc += wv * at(ci, f, y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        let x = FeatureMap::new_3d(2, 2, 3, 4, (0..48).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let weight: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let bias = [0.1, -0.2, 0.3];
        let got = conv3x3(&x, &weight, &bias, 3);
        let want = conv_oracle(&x, &weight, &bias, 3);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_averages_quads() {
        let x = FeatureMap::new_2d(1, 2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(avg_pool2(&x).data(), &[3.5, 5.5]);
        let g = avg_pool2_backward(&FeatureMap::new_2d(1, 1, 2, vec![4.0, 8.0]).unwrap());
        assert_eq!(g.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn odd_sizes_rejected_when_downsampling() {
        let stage = BackboneStage { in_channels: 1, out_channels: 1, weight: vec![0.0; 9], bias: vec![0.0], activation: Activation::Identity, downsample: true };
        assert!(stage.forward(&FeatureMap::zeros(1, None, 3, 4)).is_err());
    }
}
