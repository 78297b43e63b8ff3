//! Lateral connections that inject label embeddings into CNN feature maps.
//!
//! For a feature map `x` with `C` channels over `S = (T·)H·W` locations and
//! label embeddings `E ∈ R^{N×C}`:
//!
//! ```text
//! m = reshape(x, S×C) · σ(Eᵀ)        correlation of every location with every label, S×N
//! r = mᵀ                             label-channel map, N×S
//! y = g(r) + x                       g: pointwise N→C convolution with bias
//! ```
//!
//! Written as matrices over the channel-major layout this is
//! `y = W_g · σ(E) · x + b + x`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::gcn::{he_normal, Activation};
use crate::{Error, Matrix, Result};

/// Channel-major activation tensor `C × (T ×) H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    frames: Option<usize>,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, frames: Option<usize>, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || frames == Some(0) {
            return Err(Error::shape("FeatureMap::new", "every dimension must be at least 1"));
        }
        let expected = channels * frames.unwrap_or(1) * height * width;
        if data.len() != expected {
            return Err(Error::shape("FeatureMap::new", format!("{} values, expected {expected}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap { channels, frames, height, width, data })
    }

    pub fn new_2d(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        FeatureMap::new(channels, None, height, width, data)
    }

    pub fn new_3d(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        FeatureMap::new(channels, Some(frames), height, width, data)
    }

    pub fn zeros(channels: usize, frames: Option<usize>, height: usize, width: usize) -> Self {
        let len = channels * frames.unwrap_or(1) * height * width;
        FeatureMap { channels, frames, height, width, data: vec![0.0; len] }
    }

    pub(crate) fn from_parts_unchecked(channels: usize, frames: Option<usize>, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * frames.unwrap_or(1) * height * width);
        FeatureMap { channels, frames, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> Option<usize> {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, Option<usize>, usize, usize) {
        (self.channels, self.frames, self.height, self.width)
    }

    /// Number of spatio-temporal locations, `(T·)H·W`.
    pub fn locations(&self) -> usize {
        self.frames.unwrap_or(1) * self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let s = self.locations();
        &self.data[c * s..(c + 1) * s]
    }

    /// The map as a `C × S` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.channels, self.locations(), self.data.clone()).expect("consistent dims")
    }

    fn with_matrix(&self, m: Matrix) -> FeatureMap {
        debug_assert_eq!(m.shape(), (self.channels, self.locations()));
        FeatureMap { data: m.into_vec(), ..*self }
    }

    /// Reorders locations: value at location `s` moves to `perm[s]` in every channel.
    pub fn permute_locations(&self, perm: &[usize]) -> FeatureMap {
        self.with_matrix(self.to_matrix().permute_cols(perm))
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        if self.dims() != other.dims() {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max)
    }
}

/// Parameters of one lateral connection: the pointwise convolution `g`
/// (`N` label channels to `C` feature channels) and the activation applied
/// to the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LcParams {
    /// `C × N`.
    pub conv_weight: Matrix,
    /// Length `C`; `None` disables the bias.
    pub conv_bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl LcParams {
    pub fn new(conv_weight: Matrix, conv_bias: Option<Vec<f64>>, activation: Activation) -> Result<Self> {
        if !conv_weight.is_finite() {
            return Err(Error::NonFinite("LC weight"));
        }
        if let Some(b) = &conv_bias {
            if b.len() != conv_weight.rows() {
                return Err(Error::shape("LcParams::new", format!("bias has {} entries for {} channels", b.len(), conv_weight.rows())));
            }
        }
        Ok(LcParams { conv_weight, conv_bias, activation })
    }

    pub fn zeros(channels: usize, labels: usize, bias: bool, activation: Activation) -> Self {
        LcParams {
            conv_weight: Matrix::zeros(channels, labels),
            conv_bias: bias.then(|| vec![0.0; channels]),
            activation,
        }
    }

    /// Gaussian weights with standard deviation `scale · sqrt(2 / N)`, zero bias.
    pub fn init<R: Rng + ?Sized>(channels: usize, labels: usize, bias: bool, activation: Activation, scale: f64, rng: &mut R) -> Self {
        let conv_weight = he_normal(channels, labels, labels, rng).scale(scale);
        LcParams { conv_weight, conv_bias: bias.then(|| vec![0.0; channels]), activation }
    }

    pub fn channels(&self) -> usize {
        self.conv_weight.rows()
    }

    pub fn labels(&self) -> usize {
        self.conv_weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcGrads {
    pub x: FeatureMap,
    pub embeddings: Matrix,
    pub conv_weight: Matrix,
    pub conv_bias: Option<Vec<f64>>,
}

fn check_shapes(x: &FeatureMap, e: &Matrix, params: &LcParams) -> Result<()> {
    if e.cols() != x.channels() {
        return Err(Error::shape("lc_forward", format!("embeddings have {} channels, feature map has {}", e.cols(), x.channels())));
    }
    if params.channels() != x.channels() || params.labels() != e.rows() {
        return Err(Error::shape(
            "lc_forward",
            format!(
                "g maps {} labels to {} channels; got {} labels and {} channels",
                params.labels(),
                params.channels(),
                e.rows(),
                x.channels()
            ),
        ));
    }
    Ok(())
}

/// Label-channel map `r = σ(E) · x`, `N × S`.
fn correlate(x: &Matrix, activated: &Matrix) -> Result<Matrix> {
    activated.matmul(x)
}

/// Lateral connection on a 2D or 3D feature map; the output has the input's shape.
pub fn lc_forward(x: &FeatureMap, e: &Matrix, params: &LcParams) -> Result<FeatureMap> {
    check_shapes(x, e, params)?;
    let act = params.activation;
    let activated = e.map(|v| act.apply(v));
    let xm = x.to_matrix();
    let r = correlate(&xm, &activated)?;
    let mut y = params.conv_weight.matmul(&r)?;
    let s = x.locations();
    for c in 0..x.channels() {
        let b = params.conv_bias.as_ref().map_or(0.0, |b| b[c]);
        for (out, &res) in y.row_mut(c).iter_mut().zip(&xm.as_slice()[c * s..(c + 1) * s]) {
            *out += b + res;
        }
    }
    Ok(x.with_matrix(y))
}

pub fn lc_forward_2d(x: &FeatureMap, e: &Matrix, params: &LcParams) -> Result<FeatureMap> {
    if x.frames().is_some() {
        return Err(Error::shape("lc_forward_2d", "feature map has a frame axis"));
    }
    lc_forward(x, e, params)
}

pub fn lc_forward_3d(x: &FeatureMap, e: &Matrix, params: &LcParams) -> Result<FeatureMap> {
    if x.frames().is_none() {
        return Err(Error::shape("lc_forward_3d", "feature map has no frame axis"));
    }
    lc_forward(x, e, params)
}

/// Exact gradients of [`lc_forward`] for upstream gradient `grad_y`.
pub fn lc_backward(x: &FeatureMap, e: &Matrix, params: &LcParams, grad_y: &FeatureMap) -> Result<LcGrads> {
    check_shapes(x, e, params)?;
    if grad_y.dims() != x.dims() {
        return Err(Error::shape("lc_backward", "upstream gradient shape differs from input"));
    }
    let act = params.activation;
    let activated = e.map(|v| act.apply(v));
    let xm = x.to_matrix();
    let g = grad_y.to_matrix();
    let r = correlate(&xm, &activated)?;

    let grad_weight = g.matmul_t(&r)?;
    let grad_bias = params.conv_bias.as_ref().map(|_| g.row_sums());
    let grad_r = params.conv_weight.t_matmul(&g)?;
    let grad_x = activated.t_matmul(&grad_r)?.add(&g)?;
    let grad_activated = grad_r.matmul_t(&xm)?;
    let grad_e = e.zip_with(&grad_activated, "lc_backward", |v, ga| ga * act.derivative(v))?;

    Ok(LcGrads { x: x.with_matrix(grad_x), embeddings: grad_e, conv_weight: grad_weight, conv_bias: grad_bias })
}
