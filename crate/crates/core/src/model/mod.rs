//! The assembled network: convolutional backbone stages, a GCN over the
//! label graph, lateral connections from GCN layers into the backbone, and a
//! dot-product head that scores pooled features against the final label
//! embeddings.

pub mod backbone;
pub mod loss;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution};

use crate::gcn::{gcn_stack_backward, gcn_stack_forward_cached, Activation, GcnLayer, GcnStack, LayerCache};
use crate::graph::AdjacencyMatrix;
use crate::lateral::{lc_backward, lc_forward, FeatureMap, LcParams};
use crate::linalg::dot;
use crate::{Error, Matrix, Result};

pub use backbone::{BackboneStage, StageCache};
pub use loss::{bce_loss, bce_loss_grad};

/// GCN output widths of the full-size image model.
pub const FULL_SIZE_CHANNELS: [usize; 4] = [256, 512, 1024, 2048];

/// [`FULL_SIZE_CHANNELS`] divided by `divisor` (integer division).
pub fn scaled_channel_schedule(divisor: usize) -> Result<Vec<usize>> {
    if divisor == 0 || divisor > FULL_SIZE_CHANNELS[0] {
        return Err(Error::InvalidParameter { name: "channel_divisor", value: divisor as f64, range: "1..=256" });
    }
    Ok(FULL_SIZE_CHANNELS.iter().map(|c| c / divisor).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Gcn,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub is_bias: bool,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, group: ParamGroup, is_bias: bool) -> Self {
        ParamSpec { name, shape, group, is_bias }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An LC operation after backbone stage `stage`, fed by the output of GCN
/// layer `gcn_layer` (0-based, so `E⁽ᵍᶜⁿ_ˡᵃʸᵉʳ⁺¹⁾`).
#[derive(Debug, Clone, PartialEq)]
pub struct LateralConnection {
    pub stage: usize,
    pub gcn_layer: usize,
    pub params: LcParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Output width of each backbone stage; the GCN uses the same widths.
    pub stage_channels: Vec<usize>,
    /// Width `F` of the initial label embeddings.
    pub embedding_dim: usize,
    pub backbone_activation: Activation,
    pub gcn_activation: Activation,
    pub lc_activation: Activation,
    /// Attach an LC to every stage but the last.
    pub lateral: bool,
    pub lc_bias: bool,
    /// Multiplier on the LC weight initialization; 0 starts from the LC-free model.
    pub lc_init_scale: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            stage_channels: vec![16, 32, 64, 128],
            embedding_dim: 300,
            backbone_activation: Activation::leaky_relu(),
            gcn_activation: Activation::leaky_relu(),
            lc_activation: Activation::Tanh,
            lateral: true,
            lc_bias: true,
            lc_init_scale: 0.1,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KssModel {
    pub stages: Vec<BackboneStage>,
    pub gcn: GcnStack,
    pub lcs: Vec<LateralConnection>,
    pub dropout_rate: f64,
}

impl KssModel {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, adjacency: AdjacencyMatrix, rng: &mut R) -> Result<Self> {
        if config.stage_channels.is_empty() {
            return Err(Error::shape("KssModel::new", "at least one stage is required"));
        }
        let n = adjacency.n();
        let mut stages = Vec::with_capacity(config.stage_channels.len());
        let mut c_in = config.input_channels;
        for &c in &config.stage_channels {
            stages.push(BackboneStage::he_init(c_in, c, config.backbone_activation, rng));
            c_in = c;
        }
        let gcn = GcnStack::he_init(adjacency, config.embedding_dim, &config.stage_channels, config.gcn_activation, rng);
        let mut lcs = Vec::new();
        if config.lateral {
            for (s, &c) in config.stage_channels.iter().enumerate().take(config.stage_channels.len() - 1) {
                let params = LcParams::init(c, n, config.lc_bias, config.lc_activation, config.lc_init_scale, rng);
                lcs.push(LateralConnection { stage: s, gcn_layer: s, params });
            }
        }
        let model = KssModel { stages, gcn, lcs, dropout_rate: config.dropout };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParameter { name: "dropout", value: self.dropout_rate, range: "[0, 1)" });
        }
        let last_stage = self.stages.last().ok_or_else(|| Error::shape("KssModel", "no backbone stages"))?;
        let last_layer = self.gcn.layers.last().ok_or_else(|| Error::shape("KssModel", "no GCN layers"))?;
        if last_layer.out_channels() != last_stage.out_channels {
            return Err(Error::shape(
                "KssModel",
                format!("final GCN width {} differs from backbone width {}", last_layer.out_channels(), last_stage.out_channels),
            ));
        }
        let mut seen = vec![false; self.stages.len()];
        for lc in &self.lcs {
            let stage = self.stages.get(lc.stage).ok_or_else(|| Error::shape("KssModel", format!("LC at missing stage {}", lc.stage)))?;
            let layer = self.gcn.layers.get(lc.gcn_layer).ok_or_else(|| Error::shape("KssModel", format!("LC fed by missing GCN layer {}", lc.gcn_layer)))?;
            if core::mem::replace(&mut seen[lc.stage], true) {
                return Err(Error::shape("KssModel", format!("two LCs at stage {}", lc.stage)));
            }
            if layer.out_channels() != stage.out_channels || lc.params.channels() != stage.out_channels || lc.params.labels() != self.n_labels() {
                return Err(Error::shape("KssModel", format!("LC at stage {} does not pair with GCN layer {}", lc.stage, lc.gcn_layer)));
            }
        }
        Ok(())
    }

    pub fn n_labels(&self) -> usize {
        self.gcn.n()
    }

    pub fn embedding_dim(&self) -> usize {
        self.gcn.layers.first().map_or(0, GcnLayer::in_channels)
    }

    pub fn gcn_depth(&self) -> usize {
        self.gcn.depth()
    }

    /// The same model with every LC removed.
    pub fn without_laterals(&self) -> KssModel {
        KssModel { lcs: Vec::new(), ..self.clone() }
    }

    /// Parameter names, shapes and optimizer groups, in the order used by
    /// [`KssModel::flatten`] and gradient vectors.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (s, st) in self.stages.iter().enumerate() {
            specs.push(ParamSpec::new(format!("backbone.stage{s}.conv.weight"), vec![st.out_channels, st.in_channels, 3, 3], ParamGroup::Other, false));
            specs.push(ParamSpec::new(format!("backbone.stage{s}.conv.bias"), vec![st.out_channels], ParamGroup::Other, true));
        }
        for (l, layer) in self.gcn.layers.iter().enumerate() {
            specs.push(ParamSpec::new(format!("gcn.layer{l}.W"), vec![layer.in_channels(), layer.out_channels()], ParamGroup::Gcn, false));
        }
        for lc in &self.lcs {
            let p = &lc.params;
            specs.push(ParamSpec::new(format!("lc.{}.g.weight", lc.stage), vec![p.channels(), p.labels()], ParamGroup::Other, false));
            if p.conv_bias.is_some() {
                specs.push(ParamSpec::new(format!("lc.{}.g.bias", lc.stage), vec![p.channels()], ParamGroup::Other, true));
            }
        }
        specs
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for st in &self.stages {
            out.push(&st.weight);
            out.push(&st.bias);
        }
        for layer in &self.gcn.layers {
            out.push(layer.weight.as_slice());
        }
        for lc in &self.lcs {
            out.push(lc.params.conv_weight.as_slice());
            if let Some(b) = &lc.params.conv_bias {
                out.push(b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let KssModel { stages, gcn, lcs, .. } = self;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for st in stages.iter_mut() {
            out.push(&mut st.weight);
            out.push(&mut st.bias);
        }
        for layer in gcn.layers.iter_mut() {
            out.push(layer.weight.as_mut_slice());
        }
        for lc in lcs.iter_mut() {
            let LcParams { conv_weight, conv_bias, .. } = &mut lc.params;
            out.push(conv_weight.as_mut_slice());
            if let Some(b) = conv_bias {
                out.push(b);
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params().iter().map(|p| p.len()).sum();
        if flat.len() != total {
            return Err(Error::shape("KssModel::set_flat", format!("{} values for {total} parameters", flat.len())));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        }
        Ok(())
    }

    /// Joint relabeling: the graph, LC label channels, and (by the caller)
    /// the initial embeddings move label `i` to `perm[i]`.
    pub fn permute_labels(&self, perm: &[usize]) -> KssModel {
        let mut out = self.clone();
        out.gcn.adjacency = self.gcn.adjacency.permute(perm);
        for lc in &mut out.lcs {
            lc.params.conv_weight = lc.params.conv_weight.permute_cols(perm);
        }
        out
    }

    fn lc_by_stage(&self) -> Vec<Option<usize>> {
        let mut by_stage = vec![None; self.stages.len()];
        for (i, lc) in self.lcs.iter().enumerate() {
            by_stage[lc.stage] = Some(i);
        }
        by_stage
    }

    /// Forward pass keeping everything needed for [`KssModel::backward`].
    /// Dropout on the pooled features is applied only when `dropout_rng` is given.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        inputs: &[FeatureMap],
        e0: &Matrix,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<(Matrix, ForwardCache)> {
        if e0.rows() != self.n_labels() || e0.cols() != self.embedding_dim() {
            return Err(Error::shape(
                "model_forward",
                format!("initial embeddings are {}x{}, expected {}x{}", e0.rows(), e0.cols(), self.n_labels(), self.embedding_dim()),
            ));
        }
        let (embeddings, gcn_caches) = gcn_stack_forward_cached(&self.gcn, e0)?;
        let classifier = embeddings.last().expect("validated non-empty GCN");
        let by_stage = self.lc_by_stage();
        let n = self.n_labels();
        let keep = 1.0 - self.dropout_rate;
        let mut logits = Matrix::zeros(inputs.len(), n);
        let mut samples = Vec::with_capacity(inputs.len());
        for (b, input) in inputs.iter().enumerate() {
            let mut x = input.clone();
            let mut stage_caches = Vec::with_capacity(self.stages.len());
            let mut lc_inputs = Vec::with_capacity(self.stages.len());
            for (s, stage) in self.stages.iter().enumerate() {
                let (pooled, cache) = stage.forward_cached(&x)?;
                stage_caches.push(cache);
                match by_stage[s] {
                    Some(i) => {
                        let lc = &self.lcs[i];
                        x = lc_forward(&pooled, &embeddings[lc.gcn_layer], &lc.params)?;
                        lc_inputs.push(Some(pooled));
                    }
                    None => {
                        x = pooled;
                        lc_inputs.push(None);
                    }
                }
            }
            let mut features = backbone::global_average_pool(&x);
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if self.dropout_rate > 0.0 => {
                    let bern = Bernoulli::new(keep).expect("keep probability in (0, 1]");
                    let mask: Vec<f64> = features.iter().map(|_| if bern.sample(rng) { 1.0 / keep } else { 0.0 }).collect();
                    for (f, m) in features.iter_mut().zip(&mask) {
                        *f *= m;
                    }
                    Some(mask)
                }
                _ => None,
            };
            for j in 0..n {
                logits[(b, j)] = dot(classifier.row(j), &features);
            }
            samples.push(SampleCache { stages: stage_caches, lc_inputs, last: x, features, mask });
        }
        Ok((logits, ForwardCache { embeddings, gcn_caches, samples }))
    }

    /// Gradients of every parameter (ordered as [`KssModel::param_specs`])
    /// given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Matrix) -> Result<Vec<Vec<f64>>> {
        if grad_logits.shape() != (cache.samples.len(), self.n_labels()) {
            return Err(Error::shape("KssModel::backward", format!("logit gradient is {:?}", grad_logits.shape())));
        }
        let depth = self.gcn.depth();
        let classifier = &cache.embeddings[depth - 1];
        let by_stage = self.lc_by_stage();

        let mut stage_w: Vec<Vec<f64>> = self.stages.iter().map(|s| vec![0.0; s.weight.len()]).collect();
        let mut stage_b: Vec<Vec<f64>> = self.stages.iter().map(|s| vec![0.0; s.bias.len()]).collect();
        let mut lc_w: Vec<Matrix> = self.lcs.iter().map(|lc| Matrix::zeros(lc.params.channels(), lc.params.labels())).collect();
        let mut lc_b: Vec<Option<Vec<f64>>> = self.lcs.iter().map(|lc| lc.params.conv_bias.as_ref().map(|b| vec![0.0; b.len()])).collect();
        let mut grad_embeddings: Vec<Option<Matrix>> = vec![None; depth];
        let mut grad_classifier = Matrix::zeros(classifier.rows(), classifier.cols());

        for (b, sample) in cache.samples.iter().enumerate() {
            let dl = grad_logits.row(b);
            let mut grad_features = vec![0.0; sample.features.len()];
            for (j, &g) in dl.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (c, (gc, &f)) in grad_classifier.row_mut(j).iter_mut().zip(&sample.features).enumerate() {
                    *gc += g * f;
                    grad_features[c] += g * classifier[(j, c)];
                }
            }
            if let Some(mask) = &sample.mask {
                for (g, m) in grad_features.iter_mut().zip(mask) {
                    *g *= m;
                }
            }
            let mut grad_x = backbone::global_average_pool_backward(&grad_features, &sample.last);
            for s in (0..self.stages.len()).rev() {
                let grad_pooled = match by_stage[s] {
                    Some(i) => {
                        let lc = &self.lcs[i];
                        let pooled = sample.lc_inputs[s].as_ref().expect("cached LC input");
                        let g = lc_backward(pooled, &cache.embeddings[lc.gcn_layer], &lc.params, &grad_x)?;
                        add_into(lc_w[i].as_mut_slice(), g.conv_weight.as_slice());
                        if let (Some(acc), Some(gb)) = (lc_b[i].as_mut(), g.conv_bias.as_ref()) {
                            add_into(acc, gb);
                        }
                        let slot = &mut grad_embeddings[lc.gcn_layer];
                        match slot {
                            Some(acc) => add_into(acc.as_mut_slice(), g.embeddings.as_slice()),
                            None => *slot = Some(g.embeddings),
                        }
                        g.x
                    }
                    None => grad_x,
                };
                let (grad_in, gw, gb) = self.stages[s].backward(&sample.stages[s], &grad_pooled, s > 0);
                add_into(&mut stage_w[s], &gw);
                add_into(&mut stage_b[s], &gb);
                match grad_in {
                    Some(g) => grad_x = g,
                    None => break,
                }
            }
        }

        match &mut grad_embeddings[depth - 1] {
            Some(acc) => add_into(acc.as_mut_slice(), grad_classifier.as_slice()),
            slot @ None => *slot = Some(grad_classifier),
        }
        let (gcn_w, _) = gcn_stack_backward(&self.gcn, &cache.gcn_caches, &grad_embeddings)?;

        let mut grads = Vec::new();
        for (w, b) in stage_w.into_iter().zip(stage_b) {
            grads.push(w);
            grads.push(b);
        }
        for w in gcn_w {
            grads.push(w.into_vec());
        }
        for (w, b) in lc_w.into_iter().zip(lc_b) {
            grads.push(w.into_vec());
            if let Some(b) = b {
                grads.push(b);
            }
        }
        Ok(grads)
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

#[derive(Debug, Clone)]
pub struct SampleCache {
    stages: Vec<StageCache>,
    lc_inputs: Vec<Option<FeatureMap>>,
    last: FeatureMap,
    features: Vec<f64>,
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `E⁽¹⁾ … E⁽ᴸ⁾`.
    pub embeddings: Vec<Matrix>,
    gcn_caches: Vec<LayerCache>,
    samples: Vec<SampleCache>,
}

/// Inference logits, `batch × N`, without dropout.
pub fn model_forward(model: &KssModel, inputs: &[FeatureMap], e0: &Matrix) -> Result<Matrix> {
    model.forward_train::<rand_chacha::ChaCha8Rng>(inputs, e0, None).map(|(logits, _)| logits)
}

/// Mean BCE loss and its parameter gradients for one batch.
pub fn loss_and_gradients<R: Rng + ?Sized>(
    model: &KssModel,
    inputs: &[FeatureMap],
    targets: &Matrix,
    e0: &Matrix,
    dropout_rng: Option<&mut R>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (logits, cache) = model.forward_train(inputs, e0, dropout_rng)?;
    let loss = bce_loss(&logits, targets)?;
    let grad = bce_loss_grad(&logits, targets)?;
    Ok((loss, model.backward(&cache, &grad)?))
}

/// Keeps the last `depth` GCN layers and the LCs they feed. The new first
/// layer is re-initialized to read the `F`-wide initial embeddings.
pub fn make_depth_variant<R: Rng + ?Sized>(model: &KssModel, depth: usize, rng: &mut R) -> Result<KssModel> {
    let max = model.gcn_depth();
    if depth < 2 || depth > max {
        return Err(Error::InvalidDepth { requested: depth, max });
    }
    if depth == max {
        return Ok(model.clone());
    }
    let dropped = max - depth;
    let f = model.embedding_dim();
    let mut layers: Vec<GcnLayer> = model.gcn.layers[dropped..].to_vec();
    let first = &layers[0];
    layers[0] = GcnLayer::he_init(f, first.out_channels(), first.activation, rng);
    let gcn = GcnStack::new(layers, model.gcn.adjacency.clone())?;
    let lcs = model
        .lcs
        .iter()
        .filter(|lc| lc.gcn_layer >= dropped)
        .map(|lc| LateralConnection { gcn_layer: lc.gcn_layer - dropped, ..lc.clone() })
        .collect();
    let out = KssModel { stages: model.stages.clone(), gcn, lcs, dropout_rate: model.dropout_rate };
    out.validate()?;
    Ok(out)
}
