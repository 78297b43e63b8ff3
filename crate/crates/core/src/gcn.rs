//! Stacked graph convolutions `E⁽ˡ⁺¹⁾ = σ(A' · E⁽ˡ⁾ · W⁽ˡ⁾)` with
//! hand-written reverse-mode gradients.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::AdjacencyMatrix;
use crate::{Error, Matrix, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const fn leaky_relu() -> Self {
        Activation::LeakyRelu { slope: DEFAULT_LEAKY_SLOPE }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => leaky_relu(x, slope),
            Activation::Tanh => libm::tanh(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(x);
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Zero-mean Gaussian with variance `2 / fan_in`.
pub fn he_normal<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// One graph convolution. No bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// `C_in × C_out`.
    pub weight: Matrix,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new(weight: Matrix, activation: Activation) -> Result<Self> {
        if !weight.is_finite() {
            return Err(Error::NonFinite("GCN weight"));
        }
        Ok(GcnLayer { weight, activation })
    }

    pub fn he_init<R: Rng + ?Sized>(c_in: usize, c_out: usize, activation: Activation, rng: &mut R) -> Self {
        GcnLayer { weight: he_normal(c_in, c_out, c_in, rng), activation }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.cols()
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `A' · E`.
    pub propagated: Matrix,
    /// `A' · E · W`, before the activation.
    pub pre_activation: Matrix,
}

pub fn gcn_layer_forward_cached(adj: &AdjacencyMatrix, e: &Matrix, layer: &GcnLayer) -> Result<(Matrix, LayerCache)> {
    if adj.n() != e.rows() {
        return Err(Error::shape("gcn_layer_forward", format!("adjacency is {0}x{0}, embeddings have {1} rows", adj.n(), e.rows())));
    }
    if e.cols() != layer.in_channels() {
        return Err(Error::shape(
            "gcn_layer_forward",
            format!("embeddings have {} channels, layer expects {}", e.cols(), layer.in_channels()),
        ));
    }
    let propagated = adj.matrix().matmul(e)?;
    let pre_activation = propagated.matmul(&layer.weight)?;
    let act = layer.activation;
    let out = pre_activation.map(|z| act.apply(z));
    Ok((out, LayerCache { propagated, pre_activation }))
}

pub fn gcn_layer_forward(adj: &AdjacencyMatrix, e: &Matrix, layer: &GcnLayer) -> Result<Matrix> {
    gcn_layer_forward_cached(adj, e, layer).map(|(out, _)| out)
}

/// Returns `(∂L/∂E, ∂L/∂W)` given `∂L/∂out`.
pub fn gcn_layer_backward(
    adj: &AdjacencyMatrix,
    layer: &GcnLayer,
    cache: &LayerCache,
    grad_out: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let act = layer.activation;
    let grad_pre = cache.pre_activation.zip_with(grad_out, "gcn_layer_backward", |z, g| g * act.derivative(z))?;
    let grad_w = cache.propagated.t_matmul(&grad_pre)?;
    let grad_propagated = grad_pre.matmul_t(&layer.weight)?;
    let grad_e = adj.matrix().t_matmul(&grad_propagated)?;
    Ok((grad_e, grad_w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    pub layers: Vec<GcnLayer>,
    pub adjacency: AdjacencyMatrix,
}

impl GcnStack {
    pub fn new(layers: Vec<GcnLayer>, adjacency: AdjacencyMatrix) -> Result<Self> {
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::shape(
                    "GcnStack::new",
                    format!(
                        "layer {l} outputs {} channels, layer {} expects {}",
                        pair[0].out_channels(),
                        l + 1,
                        pair[1].in_channels()
                    ),
                ));
            }
        }
        Ok(GcnStack { layers, adjacency })
    }

    /// He-initialized stack mapping `in_channels` through `widths`.
    pub fn he_init<R: Rng + ?Sized>(
        adjacency: AdjacencyMatrix,
        in_channels: usize,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for &c_out in widths {
            layers.push(GcnLayer::he_init(c_in, c_out, activation, rng));
            c_in = c_out;
        }
        GcnStack { layers, adjacency }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }
}

pub fn gcn_stack_forward_cached(stack: &GcnStack, e0: &Matrix) -> Result<(Vec<Matrix>, Vec<LayerCache>)> {
    let mut outputs: Vec<Matrix> = Vec::with_capacity(stack.depth());
    let mut caches = Vec::with_capacity(stack.depth());
    for layer in &stack.layers {
        let input = outputs.last().unwrap_or(e0);
        let (out, cache) = gcn_layer_forward_cached(&stack.adjacency, input, layer)?;
        outputs.push(out);
        caches.push(cache);
    }
    Ok((outputs, caches))
}

/// `[E⁽¹⁾, …, E⁽ᴸ⁾]`; every intermediate is returned because lateral
/// connections consume them.
pub fn gcn_stack_forward(stack: &GcnStack, e0: &Matrix) -> Result<Vec<Matrix>> {
    gcn_stack_forward_cached(stack, e0).map(|(out, _)| out)
}

/// Back-propagates per-layer output gradients through the stack.
///
/// `grad_outputs[l]` is the gradient reaching `E⁽ˡ⁺¹⁾` from outside the stack
/// (lateral connections or the head); `None` means zero. Returns weight
/// gradients in layer order and the gradient with respect to `E⁽⁰⁾`.
pub fn gcn_stack_backward(
    stack: &GcnStack,
    caches: &[LayerCache],
    grad_outputs: &[Option<Matrix>],
) -> Result<(Vec<Matrix>, Matrix)> {
    let depth = stack.depth();
    if caches.len() != depth || grad_outputs.len() != depth {
        return Err(Error::shape("gcn_stack_backward", format!("{} caches, {} gradients for {depth} layers", caches.len(), grad_outputs.len())));
    }
    let mut weight_grads: Vec<Matrix> = stack.layers.iter().map(|l| Matrix::zeros(l.in_channels(), l.out_channels())).collect();
    let mut carried: Option<Matrix> = None;
    for l in (0..depth).rev() {
        let layer = &stack.layers[l];
        let n = stack.n();
        let mut grad = Matrix::zeros(n, layer.out_channels());
        if let Some(g) = &grad_outputs[l] {
            grad = grad.add(g)?;
        }
        if let Some(c) = carried.take() {
            grad = grad.add(&c)?;
        }
        let (grad_e, grad_w) = gcn_layer_backward(&stack.adjacency, layer, &caches[l], &grad)?;
        weight_grads[l] = grad_w;
        carried = Some(grad_e);
    }
    let grad_e0 = carried.unwrap_or_else(|| Matrix::zeros(stack.n(), 0));
    Ok((weight_grads, grad_e0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leaky_relu_examples() {
        assert_eq!(leaky_relu(1.0, 0.2), 1.0);
        assert_eq!(leaky_relu(-1.0, 0.2), -0.2);
        assert_eq!(leaky_relu(0.0, 0.7), 0.0);
    }

    #[test]
    fn zero_embeddings_propagate_zero() {
        let adj = AdjacencyMatrix::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for act in [Activation::leaky_relu(), Activation::Tanh] {
            let layer = GcnLayer::he_init(4, 5, act, &mut rng);
            let out = gcn_layer_forward(&adj, &Matrix::zeros(3, 4), &layer).unwrap();
            assert_eq!(out, Matrix::zeros(3, 5));
        }
    }

    #[test]
    fn identity_graph_and_weight_is_identity_on_nonnegative_input() {
        let e = Matrix::from_rows(&[[1.0, 2.0], [0.0, 3.5]]);
        let layer = GcnLayer::new(Matrix::identity(2), Activation::leaky_relu()).unwrap();
        assert_eq!(gcn_layer_forward(&AdjacencyMatrix::identity(2), &e, &layer).unwrap(), e);
    }

    #[test]
    fn two_node_example() {
        let adj = AdjacencyMatrix::new(Matrix::from_rows(&[[0.6, 0.4], [0.4, 0.6]])).unwrap();
        let e = Matrix::from_rows(&[[1.0], [0.0]]);
        let layer = GcnLayer::new(Matrix::from_rows(&[[1.0]]), Activation::leaky_relu()).unwrap();
        let out = gcn_layer_forward(&adj, &e, &layer).unwrap();
        assert_eq!(out, Matrix::from_rows(&[[0.6], [0.4]]));
    }

    #[test]
    fn two_layer_stack_is_composition() {
        let adj = AdjacencyMatrix::new(Matrix::from_rows(&[[0.6, 0.4], [0.4, 0.6]])).unwrap();
        let e0 = Matrix::from_rows(&[[1.0, -0.5], [0.25, 2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stack = GcnStack::he_init(adj.clone(), 2, &[3, 2], Activation::leaky_relu(), &mut rng);
        let outs = gcn_stack_forward(&stack, &e0).unwrap();
        let first = gcn_layer_forward(&adj, &e0, &stack.layers[0]).unwrap();
        let second = gcn_layer_forward(&adj, &first, &stack.layers[1]).unwrap();
        assert_eq!(outs, alloc::vec![first, second]);
    }

    #[test]
    fn empty_stack_yields_nothing() {
        let stack = GcnStack::new(Vec::new(), AdjacencyMatrix::identity(2)).unwrap();
        assert!(gcn_stack_forward(&stack, &Matrix::zeros(2, 3)).unwrap().is_empty());
    }

    #[test]
    fn full_size_channel_schedule_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = GcnStack::he_init(AdjacencyMatrix::identity(80), 300, &[256, 512, 1024, 2048], Activation::leaky_relu(), &mut rng);
        let outs = gcn_stack_forward(&stack, &Matrix::zeros(80, 300)).unwrap();
        let shapes: Vec<_> = outs.iter().map(Matrix::shape).collect();
        assert_eq!(shapes, [(80, 256), (80, 512), (80, 1024), (80, 2048)]);
    }

    #[test]
    fn chain_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = GcnLayer::he_init(2, 3, Activation::Tanh, &mut rng);
        let b = GcnLayer::he_init(4, 3, Activation::Tanh, &mut rng);
        assert!(GcnStack::new(alloc::vec![a, b], AdjacencyMatrix::identity(2)).is_err());
        let layer = GcnLayer::he_init(3, 3, Activation::Tanh, &mut rng);
        assert!(gcn_layer_forward(&AdjacencyMatrix::identity(2), &Matrix::zeros(2, 2), &layer).is_err());
    }
}
