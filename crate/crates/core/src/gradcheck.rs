//! Central finite-difference verification of reverse-mode gradients.
//!
//! Each objective below wraps one differentiable computation as a function of
//! a flat parameter vector, with the analytic gradient supplied by the
//! module's own backward pass. [`grad_check`] compares the two.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::gcn::{gcn_layer_backward, gcn_layer_forward_cached, he_normal, Activation, GcnLayer};
use crate::graph::{normalize, AdjacencyMatrix};
use crate::lateral::{lc_backward, lc_forward, FeatureMap, LcParams};
use crate::model::{bce_loss, loss_and_gradients, KssModel, ModelConfig};
use crate::{Error, Matrix, Result};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Scalar function of a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn dim(&self) -> usize;
    fn value(&self, params: &[f64]) -> Result<f64>;
    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>>;
}

/// `max_i |g_ad − g_fd| / max(1, |g_ad|, |g_fd|)` over central differences.
pub fn grad_check<D: Differentiable + ?Sized>(f: &D, params: &[f64], step: f64) -> Result<f64> {
    let analytic = f.gradient(params)?;
    if analytic.len() != params.len() {
        return Err(Error::shape("grad_check", "gradient length differs from parameter count"));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (i, &g_ad) in analytic.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f.value(&probe)?;
        probe[i] = orig - step;
        let minus = f.value(&probe)?;
        probe[i] = orig;
        let g_fd = (plus - minus) / (2.0 * step);
        if !g_ad.is_finite() || !g_fd.is_finite() {
            return Err(Error::NonFinite("gradient check"));
        }
        let scale = 1.0f64.max(libm::fabs(g_ad)).max(libm::fabs(g_fd));
        worst = worst.max(libm::fabs(g_ad - g_fd) / scale);
    }
    Ok(worst)
}

/// Closure-backed objective.
pub struct FnObjective<V, G> {
    pub dim: usize,
    pub value: V,
    pub gradient: G,
}

impl<V, G> Differentiable for FnObjective<V, G>
where
    V: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        (self.value)(params)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        (self.gradient)(params)
    }
}

/// Wraps an objective and perturbs its analytic gradient; a negative control
/// that a correct checker must reject.
pub struct CorruptedGradient<D>(pub D);

impl<D: Differentiable> Differentiable for CorruptedGradient<D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        self.0.value(params)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.0.gradient(params)?;
        for (i, v) in g.iter_mut().enumerate() {
            *v = *v * 1.05 + if i % 2 == 0 { 1e-2 } else { -1e-2 };
        }
        Ok(g)
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Entries bounded away from zero so leaky-ReLU kinks stay out of reach of
/// the finite-difference stencil.
fn kink_free<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let mag = Uniform::new(0.2, 1.5).expect("valid range");
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = mag.sample(rng);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

fn random_adjacency<R: Rng + ?Sized>(n: usize, rng: &mut R) -> AdjacencyMatrix {
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j || u.sample(rng) < 0.5 { u.sample(rng) } else { 0.0 };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    normalize(&AdjacencyMatrix::new(m).expect("nonnegative"))
}

/// One GCN layer; loss is `Σ R ⊙ σ(A·E·W)` with fixed weights `R`, as a
/// function of `W` followed by `E`.
pub struct GcnLayerObjective {
    pub adjacency: AdjacencyMatrix,
    pub activation: Activation,
    pub weights: Matrix,
    c_in: usize,
    c_out: usize,
    n: usize,
}

impl GcnLayerObjective {
    /// Random instance plus a starting point whose pre-activations avoid the
    /// leaky-ReLU kink by at least `margin`.
    pub fn random(n: usize, c_in: usize, c_out: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adjacency = random_adjacency(n, &mut rng);
        let weights = gaussian_matrix(n, c_out, &mut rng);
        let objective = GcnLayerObjective { adjacency, activation: Activation::leaky_relu(), weights, c_in, c_out, n };
        let margin = 1e-3;
        loop {
            let w = kink_free(c_in, c_out, &mut rng);
            let e = kink_free(n, c_in, &mut rng);
            let pre = objective.adjacency.matrix().matmul(&e).and_then(|ae| ae.matmul(&w)).expect("shapes");
            if pre.as_slice().iter().all(|z| libm::fabs(*z) > margin) {
                let mut p = w.into_vec();
                p.extend_from_slice(e.as_slice());
                return (objective, p);
            }
        }
    }

    fn split(&self, p: &[f64]) -> Result<(GcnLayer, Matrix)> {
        let nw = self.c_in * self.c_out;
        if p.len() != nw + self.n * self.c_in {
            return Err(Error::shape("GcnLayerObjective", "parameter length"));
        }
        let layer = GcnLayer::new(Matrix::from_vec(self.c_in, self.c_out, p[..nw].to_vec())?, self.activation)?;
        let e = Matrix::from_vec(self.n, self.c_in, p[nw..].to_vec())?;
        Ok((layer, e))
    }
}

impl Differentiable for GcnLayerObjective {
    fn dim(&self) -> usize {
        self.c_in * self.c_out + self.n * self.c_in
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        let (layer, e) = self.split(p)?;
        let (out, _) = gcn_layer_forward_cached(&self.adjacency, &e, &layer)?;
        Ok(crate::linalg::dot(out.as_slice(), self.weights.as_slice()))
    }

    fn gradient(&self, p: &[f64]) -> Result<Vec<f64>> {
        let (layer, e) = self.split(p)?;
        let (_, cache) = gcn_layer_forward_cached(&self.adjacency, &e, &layer)?;
        let (grad_e, grad_w) = gcn_layer_backward(&self.adjacency, &layer, &cache, &self.weights)?;
        let mut g = grad_w.into_vec();
        g.extend_from_slice(grad_e.as_slice());
        Ok(g)
    }
}

/// One LC operation; loss is `Σ R ⊙ y` as a function of `(x, E, W_g, b_g)`.
pub struct LcObjective {
    dims: (usize, Option<usize>, usize, usize),
    labels: usize,
    activation: Activation,
    weights: FeatureMap,
}

impl LcObjective {
    pub fn random(channels: usize, frames: Option<usize>, height: usize, width: usize, labels: usize, activation: Activation, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = channels * frames.unwrap_or(1) * height * width;
        let sample = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(rng)).collect() };
        let weights = FeatureMap::new(channels, frames, height, width, sample(&mut rng, len)).expect("dims");
        let mut p = sample(&mut rng, len);
        p.extend(sample(&mut rng, labels * channels));
        p.extend(sample(&mut rng, channels * labels + channels));
        (LcObjective { dims: (channels, frames, height, width), labels, activation, weights }, p)
    }

    fn split(&self, p: &[f64]) -> Result<(FeatureMap, Matrix, LcParams)> {
        let (c, t, h, w) = self.dims;
        let nx = c * t.unwrap_or(1) * h * w;
        let ne = self.labels * c;
        let nw = c * self.labels;
        if p.len() != nx + ne + nw + c {
            return Err(Error::shape("LcObjective", "parameter length"));
        }
        let x = FeatureMap::new(c, t, h, w, p[..nx].to_vec())?;
        let e = Matrix::from_vec(self.labels, c, p[nx..nx + ne].to_vec())?;
        let weight = Matrix::from_vec(c, self.labels, p[nx + ne..nx + ne + nw].to_vec())?;
        let params = LcParams::new(weight, Some(p[nx + ne + nw..].to_vec()), self.activation)?;
        Ok((x, e, params))
    }
}

impl Differentiable for LcObjective {
    fn dim(&self) -> usize {
        let (c, t, h, w) = self.dims;
        c * t.unwrap_or(1) * h * w + 2 * self.labels * c + c
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        let (x, e, params) = self.split(p)?;
        let y = lc_forward(&x, &e, &params)?;
        Ok(crate::linalg::dot(y.data(), self.weights.data()))
    }

    fn gradient(&self, p: &[f64]) -> Result<Vec<f64>> {
        let (x, e, params) = self.split(p)?;
        let g = lc_backward(&x, &e, &params, &self.weights)?;
        let mut out = g.x.into_data();
        out.extend_from_slice(g.embeddings.as_slice());
        out.extend_from_slice(g.conv_weight.as_slice());
        out.extend(g.conv_bias.unwrap_or_default());
        Ok(out)
    }
}

/// Mean BCE of a small model over a fixed batch, as a function of every
/// model parameter. Dropout is off.
pub struct ModelObjective {
    pub model: KssModel,
    pub inputs: Vec<FeatureMap>,
    pub targets: Matrix,
    pub e0: Matrix,
}

impl ModelObjective {
    /// Two stages, four labels, 8×8 inputs, random symmetric graph.
    pub fn tiny(seed: u64) -> Result<(Self, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let adjacency = random_adjacency(n, &mut rng);
        let cfg = ModelConfig {
            input_channels: 2,
            stage_channels: vec![3, 4],
            embedding_dim: 5,
            lc_init_scale: 1.0,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let mut model = KssModel::new(&cfg, adjacency, &mut rng)?;
        for lc in &mut model.lcs {
            if let Some(b) = &mut lc.params.conv_bias {
                b.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            }
        }
        for st in &mut model.stages {
            st.bias.iter_mut().for_each(|v| *v = 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let e0 = he_normal(n, 5, 1, &mut rng);
        let inputs = (0..2)
            .map(|_| FeatureMap::new_2d(2, 8, 8, (0..128).map(|_| StandardNormal.sample(&mut rng)).collect()))
            .collect::<Result<Vec<_>>>()?;
        let targets = Matrix::from_fn(2, n, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let p = model.flatten();
        Ok((ModelObjective { model, inputs, targets, e0 }, p))
    }

    fn with_params(&self, p: &[f64]) -> Result<KssModel> {
        let mut m = self.model.clone();
        m.set_flat(p)?;
        Ok(m)
    }
}

impl Differentiable for ModelObjective {
    fn dim(&self) -> usize {
        self.model.params().iter().map(|p| p.len()).sum()
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        let m = self.with_params(p)?;
        let logits = crate::model::model_forward(&m, &self.inputs, &self.e0)?;
        bce_loss(&logits, &self.targets)
    }

    fn gradient(&self, p: &[f64]) -> Result<Vec<f64>> {
        let m = self.with_params(p)?;
        let (_, grads) = loss_and_gradients::<ChaCha8Rng>(&m, &self.inputs, &self.targets, &self.e0, None)?;
        Ok(grads.concat())
    }
}

/// The gradient-check components run by the CLI and the acceptance suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    GcnLayer,
    Lc2d,
    Lc3d,
    FullModel,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::GcnLayer, Component::Lc2d, Component::Lc3d, Component::FullModel];

    pub fn name(self) -> &'static str {
        match self {
            Component::GcnLayer => "gcn_layer",
            Component::Lc2d => "lc_2d",
            Component::Lc3d => "lc_3d",
            Component::FullModel => "full_model",
        }
    }

    /// Maximum accepted relative error at 64-bit precision.
    pub fn tolerance(self) -> f64 {
        match self {
            Component::FullModel => 1e-4,
            _ => 1e-5,
        }
    }

    pub fn instance(self, seed: u64) -> Result<(Box<dyn Differentiable>, Vec<f64>)> {
        Ok(match self {
            Component::GcnLayer => {
                let (o, p) = GcnLayerObjective::random(4, 3, 5, seed);
                (Box::new(o), p)
            }
            Component::Lc2d => {
                let (o, p) = LcObjective::random(3, None, 3, 4, 5, Activation::Tanh, seed);
                (Box::new(o), p)
            }
            Component::Lc3d => {
                let (o, p) = LcObjective::random(3, Some(2), 2, 3, 4, Activation::Sigmoid, seed);
                (Box::new(o), p)
            }
            Component::FullModel => {
                let (o, p) = ModelObjective::tiny(seed)?;
                (Box::new(o), p)
            }
        })
    }
}

/// Worst relative error of `component` over `trials` seeded instances.
pub fn check_component(component: Component, seed: u64, trials: usize, step: f64, corrupt: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for t in 0..trials as u64 {
        let (objective, p) = component.instance(seed.wrapping_mul(1000).wrapping_add(t))?;
        let err = if corrupt {
            grad_check(&CorruptedGradient(objective), &p, step)?
        } else {
            grad_check(objective.as_ref(), &p, step)?
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

impl<D: Differentiable + ?Sized> Differentiable for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, params: &[f64]) -> Result<f64> {
        (**self).value(params)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let f = FnObjective { dim: 1, value: |p: &[f64]| Ok(p[0] * p[0]), gradient: |p: &[f64]| Ok(vec![2.0 * p[0]]) };
        assert!(grad_check(&f, &[3.0], 1e-6).unwrap() <= 1e-8);
    }

    #[test]
    fn wrong_gradient_detected() {
        let f = FnObjective { dim: 1, value: |p: &[f64]| Ok(p[0] * p[0]), gradient: |p: &[f64]| Ok(vec![3.0 * p[0]]) };
        assert!(grad_check(&f, &[3.0], 1e-6).unwrap() > 0.1);
    }

    #[test]
    fn non_finite_reported() {
        let f = FnObjective { dim: 1, value: |_: &[f64]| Ok(f64::NAN), gradient: |_: &[f64]| Ok(vec![0.0]) };
        assert_eq!(grad_check(&f, &[1.0], 1e-6), Err(Error::NonFinite("gradient check")));
    }

    #[test]
    fn gcn_layer_sum_loss() {
        // loss = sum(output) with respect to W only
        let (obj, p) = GcnLayerObjective::random(4, 3, 2, 9);
        let ones = GcnLayerObjective { weights: Matrix::from_fn(4, 2, |_, _| 1.0), ..obj };
        assert!(grad_check(&ones, &p, DEFAULT_STEP).unwrap() <= 1e-5);
    }

    #[test]
    fn components_pass_and_corruption_fails() {
        for c in Component::ALL {
            let err = check_component(c, 1, 2, DEFAULT_STEP, false).unwrap();
            assert!(err <= c.tolerance(), "{}: {err}", c.name());
            let bad = check_component(c, 1, 1, DEFAULT_STEP, true).unwrap();
            assert!(bad > c.tolerance(), "{} corrupted: {bad}", c.name());
        }
    }
}
