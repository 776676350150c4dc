//! Node classifiers and the attack MLP: a multi-layer GCN, a GraphSAGE
//! variant with full-neighbourhood mean aggregation, and a plain MLP. All
//! are trained with hand-written backpropagation and Adam.

use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, NumericError};
use crate::features::Posteriors;
use crate::graph::{Dataset, NodeId};
use crate::numerics::{
    adam_step, cross_entropy, mean_adjacency_sparse, normalized_adjacency_sparse, relu,
    row_softmax, softmax_cross_entropy_grad, AdamState, CsrMatrix, DropoutMask, Matrix, RowSource,
};
use crate::rng::{derive_seed, seeded};

/// Hyperparameters shared by every trainable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    /// `None` trains full-batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    /// Target / shadow target GCN: one hidden layer of 16, 100 epochs at 0.01.
    pub fn target(seed: u64) -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            dropout_rate: 0.5,
            hidden_dims: vec![16],
            seed,
            batch_size: None,
        }
    }

    /// Reference MLP; same hyperparameters as the target.
    pub fn reference(seed: u64) -> Self {
        Self::target(seed)
    }

    /// Attack MLP: three hidden layers of 32, 50 epochs at 0.001.
    pub fn attack(seed: u64) -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.001,
            dropout_rate: 0.5,
            hidden_dims: vec![32, 32, 32],
            seed,
            batch_size: Some(32),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(ModelError::Config("hidden layer of width 0".into()));
        }
        if self.batch_size == Some(0) {
            return Err(ModelError::Config("batch size 0".into()));
        }
        Ok(())
    }
}

/// Evaluation-mode training loss before and after training, plus the
/// training-mode loss of every epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Graph model architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Sage,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "sage" | "graphsage" => Ok(ModelKind::Sage),
            "mlp" => Ok(ModelKind::Mlp),
            _ => Err(format!("unknown model kind {s:?}")),
        }
    }
}

/// Anything that assigns a posterior to every node of a fixed graph.
pub trait NodeClassifier: Send + Sync {
    fn node_count(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Posterior matrix, one row per node, dropout disabled.
    fn posteriors(&self) -> Matrix;

    fn predict(&self, node: NodeId) -> Result<Posteriors, ModelError> {
        if node >= self.node_count() {
            return Err(ModelError::UnknownNode {
                node,
                node_count: self.node_count(),
            });
        }
        Ok(Posteriors(self.posteriors().row(node).to_vec()))
    }
}

fn check_labels(
    labeled_ids: &[NodeId],
    labels: &[usize],
    n: usize,
    c: usize,
) -> Result<(), ModelError> {
    if labeled_ids.is_empty() {
        return Err(ModelError::Config("no labeled nodes".into()));
    }
    if labeled_ids.len() != labels.len() {
        return Err(ModelError::Config(format!(
            "{} labeled ids, {} labels",
            labeled_ids.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labeled_ids.iter().find(|&&i| i >= n) {
        return Err(ModelError::UnknownNode {
            node: bad,
            node_count: n,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(ModelError::Config(format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

fn sgd_epoch_check(epoch: usize, loss: f64) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Diverged { epoch, loss })
    }
}

fn relu_backward(grad: &mut Matrix, pre_activation: &Matrix) {
    for (g, &z) in grad.data_mut().iter_mut().zip(pre_activation.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// GCN

/// Propagation inputs of a graph model, fixed at construction.
#[derive(Debug)]
struct GraphInput {
    propagation: CsrMatrix,
    features: Matrix,
    /// `M · F` for GraphSAGE, where `M` is the neighbour-mean operator.
    neighbor_features: Option<Matrix>,
}

/// Multi-layer GCN. Each layer computes `Â H W` with
/// `Â = D̃^{-1/2}(A + I)D̃^{-1/2}`; hidden layers apply ReLU, the last
/// feeds a softmax. No bias terms.
#[derive(Clone, Debug)]
pub struct GcnModel {
    weights: Vec<Matrix>,
    input: Arc<GraphInput>,
    config: TrainConfig,
}

struct GcnCache {
    /// Layer inputs after dropout; `inputs[0]` is unused (features).
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<DropoutMask>>,
    posteriors: Matrix,
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::new();
    let mut prev = input;
    for &h in hidden {
        dims.push((prev, h));
        prev = h;
    }
    dims.push((prev, output));
    dims
}

impl GcnModel {
    fn input_for(dataset: &Dataset) -> Arc<GraphInput> {
        Arc::new(GraphInput {
            propagation: normalized_adjacency_sparse(&dataset.graph),
            features: dataset.attributes.clone(),
            neighbor_features: None,
        })
    }

    /// Glorot-initialised, untrained model.
    pub fn init(dataset: &Dataset, config: &TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded(derive_seed(config.seed, "gcn-init"));
        let weights = layer_dims(dataset.attr_dim(), &config.hidden_dims, dataset.num_classes)
            .into_iter()
            .map(|(r, c)| Matrix::glorot(r, c, &mut rng))
            .collect();
        Ok(Self {
            weights,
            input: Self::input_for(dataset),
            config: config.clone(),
        })
    }

    /// Model with explicit weights, e.g. from a checkpoint.
    pub fn from_weights(
        dataset: &Dataset,
        config: TrainConfig,
        weights: Vec<Matrix>,
    ) -> Result<Self, ModelError> {
        let dims = layer_dims(dataset.attr_dim(), &config.hidden_dims, dataset.num_classes);
        let shapes: Vec<_> = weights.iter().map(Matrix::shape).collect();
        if shapes != dims {
            return Err(ModelError::Checkpoint(format!(
                "weight shapes {shapes:?} do not fit dataset dims {dims:?}"
            )));
        }
        Ok(Self {
            weights,
            input: Self::input_for(dataset),
            config,
        })
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn forward(
        input: &GraphInput,
        weights: &[Matrix],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<GcnCache, NumericError> {
        let last = weights.len() - 1;
        let mut inputs = vec![Matrix::zeros(0, 0)];
        let mut pre = Vec::with_capacity(weights.len());
        let mut masks = Vec::with_capacity(weights.len());
        let mut dropout = dropout;
        let mut posteriors = Matrix::zeros(0, 0);
        for (l, w) in weights.iter().enumerate() {
            let h = if l == 0 { &input.features } else { &inputs[l] };
            let z = input.propagation.matmul(&h.matmul(w)?)?;
            if l == last {
                posteriors = row_softmax(&z);
                pre.push(z);
            } else {
                let mut a = relu(&z);
                let mask = match dropout.as_mut() {
                    Some((rate, rng)) if *rate > 0.0 => {
                        let m = DropoutMask::sample(a.rows(), a.cols(), *rate, *rng);
                        a = m.apply(&a);
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                pre.push(z);
                inputs.push(a);
            }
        }
        Ok(GcnCache {
            inputs,
            pre,
            masks,
            posteriors,
        })
    }

    fn backward(
        input: &GraphInput,
        weights: &[Matrix],
        cache: &GcnCache,
        labeled_ids: &[NodeId],
        labels: &[usize],
    ) -> Result<Vec<Matrix>, NumericError> {
        let mut grads = vec![Matrix::zeros(0, 0); weights.len()];
        let mut dz = softmax_cross_entropy_grad(&cache.posteriors, labeled_ids, labels);
        for l in (0..weights.len()).rev() {
            let h = if l == 0 {
                &input.features
            } else {
                &cache.inputs[l]
            };
            let dm = input.propagation.t_matmul(&dz)?;
            grads[l] = h.t_matmul(&dm)?;
            if l > 0 {
                let mut dh = dm.matmul_t(&weights[l])?;
                if let Some(mask) = &cache.masks[l - 1] {
                    dh = mask.apply(&dh);
                }
                relu_backward(&mut dh, &cache.pre[l - 1]);
                dz = dh;
            }
        }
        Ok(grads)
    }

    /// Evaluation-mode loss and weight gradients at `weights`.
    pub fn loss_and_grads(
        &self,
        weights: &[Matrix],
        labeled_ids: &[NodeId],
        labels: &[usize],
    ) -> Result<(f64, Vec<Matrix>), ModelError> {
        let cache = Self::forward(&self.input, weights, None)?;
        let loss = cross_entropy(&cache.posteriors, labeled_ids, labels)?;
        let grads = Self::backward(&self.input, weights, &cache, labeled_ids, labels)?;
        Ok((loss, grads))
    }
}

impl NodeClassifier for GcnModel {
    fn node_count(&self) -> usize {
        self.input.features.rows()
    }

    fn num_classes(&self) -> usize {
        self.weights.last().map_or(0, Matrix::cols)
    }

    fn posteriors(&self) -> Matrix {
        Self::forward(&self.input, &self.weights, None)
            .expect("shapes validated at construction")
            .posteriors
    }
}

/// Full-batch GCN training on `labeled_ids` only.
pub fn train_gcn(
    dataset: &Dataset,
    labeled_ids: &[NodeId],
    config: &TrainConfig,
) -> Result<(GcnModel, TrainReport), ModelError> {
    let labels = dataset
        .labels_of(labeled_ids)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let mut model = GcnModel::init(dataset, config)?;
    check_labels(
        labeled_ids,
        &labels,
        dataset.node_count(),
        dataset.num_classes,
    )?;
    let mut rng = seeded(derive_seed(config.seed, "gcn-dropout"));
    let mut states: Vec<AdamState> = model.weights.iter().map(AdamState::for_param).collect();
    let eval_loss = |m: &GcnModel| -> Result<f64, ModelError> {
        Ok(cross_entropy(&m.posteriors(), labeled_ids, &labels)?)
    };
    let mut report = TrainReport {
        initial_loss: eval_loss(&model)?,
        ..TrainReport::default()
    };
    for epoch in 0..config.epochs {
        let cache = GcnModel::forward(
            &model.input,
            &model.weights,
            Some((config.dropout_rate, &mut rng)),
        )?;
        let loss = cross_entropy(&cache.posteriors, labeled_ids, &labels)?;
        sgd_epoch_check(epoch, loss)?;
        report.epoch_losses.push(loss);
        let grads = GcnModel::backward(&model.input, &model.weights, &cache, labeled_ids, &labels)?;
        for ((w, g), st) in model.weights.iter_mut().zip(&grads).zip(&mut states) {
            adam_step(w, g, st, config.learning_rate)
                .map_err(|_| ModelError::Diverged { epoch, loss })?;
        }
    }
    report.final_loss = eval_loss(&model)?;
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// GraphSAGE

/// GraphSAGE with mean aggregation over the full neighbourhood. Each layer
/// computes `[H ‖ mean_nbrs(H)] W`, stored as the two halves `W_self` and
/// `W_neigh`. Hidden layers apply ReLU; the last feeds a softmax.
#[derive(Clone, Debug)]
pub struct SageModel {
    /// `(W_self, W_neigh)` per layer.
    weights: Vec<(Matrix, Matrix)>,
    input: Arc<GraphInput>,
    config: TrainConfig,
}

struct SageCache {
    inputs: Vec<Matrix>,
    neighbor_inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<DropoutMask>>,
    posteriors: Matrix,
}

impl SageModel {
    fn input_for(dataset: &Dataset) -> Result<Arc<GraphInput>, NumericError> {
        let propagation = mean_adjacency_sparse(&dataset.graph);
        let neighbor_features = propagation.matmul(&dataset.attributes)?;
        Ok(Arc::new(GraphInput {
            propagation,
            features: dataset.attributes.clone(),
            neighbor_features: Some(neighbor_features),
        }))
    }

    pub fn init(dataset: &Dataset, config: &TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded(derive_seed(config.seed, "sage-init"));
        let weights = layer_dims(dataset.attr_dim(), &config.hidden_dims, dataset.num_classes)
            .into_iter()
            .map(|(r, c)| {
                // Glorot over the concatenated [self ‖ neigh] input.
                let full = Matrix::glorot(2 * r, c, &mut rng);
                let data = full.data();
                let (top, bottom) = data.split_at(r * c);
                (
                    Matrix::from_vec(r, c, top.to_vec()).unwrap(),
                    Matrix::from_vec(r, c, bottom.to_vec()).unwrap(),
                )
            })
            .collect();
        Ok(Self {
            weights,
            input: Self::input_for(dataset)?,
            config: config.clone(),
        })
    }

    pub fn from_weights(
        dataset: &Dataset,
        config: TrainConfig,
        weights: Vec<(Matrix, Matrix)>,
    ) -> Result<Self, ModelError> {
        let dims = layer_dims(dataset.attr_dim(), &config.hidden_dims, dataset.num_classes);
        let ok = weights.len() == dims.len()
            && weights
                .iter()
                .zip(&dims)
                .all(|((s, n), &d)| s.shape() == d && n.shape() == d);
        if !ok {
            return Err(ModelError::Checkpoint(format!(
                "GraphSAGE weights do not fit dataset dims {dims:?}"
            )));
        }
        Ok(Self {
            weights,
            input: Self::input_for(dataset)?,
            config,
        })
    }

    pub fn weights(&self) -> &[(Matrix, Matrix)] {
        &self.weights
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn forward(
        input: &GraphInput,
        weights: &[(Matrix, Matrix)],
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<SageCache, NumericError> {
        let last = weights.len() - 1;
        let mut inputs = vec![Matrix::zeros(0, 0)];
        let mut neighbor_inputs = vec![Matrix::zeros(0, 0)];
        let mut pre = Vec::new();
        let mut masks = Vec::new();
        let mut posteriors = Matrix::zeros(0, 0);
        for (l, (ws, wn)) in weights.iter().enumerate() {
            let (h, mh) = if l == 0 {
                (
                    &input.features,
                    input.neighbor_features.as_ref().expect("sage input"),
                )
            } else {
                (&inputs[l], &neighbor_inputs[l])
            };
            let z = h.matmul(ws)?.add(&mh.matmul(wn)?)?;
            if l == last {
                posteriors = row_softmax(&z);
                pre.push(z);
            } else {
                let mut a = relu(&z);
                let mask = match dropout.as_mut() {
                    Some((rate, rng)) if *rate > 0.0 => {
                        let m = DropoutMask::sample(a.rows(), a.cols(), *rate, *rng);
                        a = m.apply(&a);
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                pre.push(z);
                neighbor_inputs.push(input.propagation.matmul(&a)?);
                inputs.push(a);
            }
        }
        Ok(SageCache {
            inputs,
            neighbor_inputs,
            pre,
            masks,
            posteriors,
        })
    }

    fn backward(
        input: &GraphInput,
        weights: &[(Matrix, Matrix)],
        cache: &SageCache,
        labeled_ids: &[NodeId],
        labels: &[usize],
    ) -> Result<Vec<(Matrix, Matrix)>, NumericError> {
        let mut grads = vec![(Matrix::zeros(0, 0), Matrix::zeros(0, 0)); weights.len()];
        let mut dz = softmax_cross_entropy_grad(&cache.posteriors, labeled_ids, labels);
        for l in (0..weights.len()).rev() {
            let (h, mh) = if l == 0 {
                (
                    &input.features,
                    input.neighbor_features.as_ref().expect("sage input"),
                )
            } else {
                (&cache.inputs[l], &cache.neighbor_inputs[l])
            };
            grads[l] = (h.t_matmul(&dz)?, mh.t_matmul(&dz)?);
            if l > 0 {
                let (ws, wn) = &weights[l];
                let through_neighbors = input.propagation.t_matmul(&dz.matmul_t(wn)?)?;
                let mut dh = dz.matmul_t(ws)?.add(&through_neighbors)?;
                if let Some(mask) = &cache.masks[l - 1] {
                    dh = mask.apply(&dh);
                }
                relu_backward(&mut dh, &cache.pre[l - 1]);
                dz = dh;
            }
        }
        Ok(grads)
    }

    /// Evaluation-mode loss and gradients, flattened as
    /// `[W_self_0, W_neigh_0, W_self_1, ...]`.
    pub fn loss_and_grads(
        &self,
        flat_weights: &[Matrix],
        labeled_ids: &[NodeId],
        labels: &[usize],
    ) -> Result<(f64, Vec<Matrix>), ModelError> {
        let weights: Vec<(Matrix, Matrix)> = flat_weights
            .chunks(2)
            .map(|c| (c[0].clone(), c[1].clone()))
            .collect();
        let cache = Self::forward(&self.input, &weights, None)?;
        let loss = cross_entropy(&cache.posteriors, labeled_ids, labels)?;
        let grads = Self::backward(&self.input, &weights, &cache, labeled_ids, labels)?;
        Ok((loss, grads.into_iter().flat_map(|(a, b)| [a, b]).collect()))
    }

    pub fn flat_weights(&self) -> Vec<Matrix> {
        self.weights
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }
}

impl NodeClassifier for SageModel {
    fn node_count(&self) -> usize {
        self.input.features.rows()
    }

    fn num_classes(&self) -> usize {
        self.weights.last().map_or(0, |(w, _)| w.cols())
    }

    fn posteriors(&self) -> Matrix {
        Self::forward(&self.input, &self.weights, None)
            .expect("shapes validated at construction")
            .posteriors
    }
}

pub fn train_graphsage(
    dataset: &Dataset,
    labeled_ids: &[NodeId],
    config: &TrainConfig,
) -> Result<(SageModel, TrainReport), ModelError> {
    let labels = dataset
        .labels_of(labeled_ids)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let mut model = SageModel::init(dataset, config)?;
    check_labels(
        labeled_ids,
        &labels,
        dataset.node_count(),
        dataset.num_classes,
    )?;
    let mut rng = seeded(derive_seed(config.seed, "sage-dropout"));
    let mut states: Vec<(AdamState, AdamState)> = model
        .weights
        .iter()
        .map(|(a, b)| (AdamState::for_param(a), AdamState::for_param(b)))
        .collect();
    let eval_loss = |m: &SageModel| -> Result<f64, ModelError> {
        Ok(cross_entropy(&m.posteriors(), labeled_ids, &labels)?)
    };
    let mut report = TrainReport {
        initial_loss: eval_loss(&model)?,
        ..TrainReport::default()
    };
    for epoch in 0..config.epochs {
        let cache = SageModel::forward(
            &model.input,
            &model.weights,
            Some((config.dropout_rate, &mut rng)),
        )?;
        let loss = cross_entropy(&cache.posteriors, labeled_ids, &labels)?;
        sgd_epoch_check(epoch, loss)?;
        report.epoch_losses.push(loss);
        let grads =
            SageModel::backward(&model.input, &model.weights, &cache, labeled_ids, &labels)?;
        for (((ws, wn), (gs, gn)), (ss, sn)) in
            model.weights.iter_mut().zip(&grads).zip(&mut states)
        {
            adam_step(ws, gs, ss, config.learning_rate)
                .and_then(|_| adam_step(wn, gn, sn, config.learning_rate))
                .map_err(|_| ModelError::Diverged { epoch, loss })?;
        }
    }
    report.final_loss = eval_loss(&model)?;
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// MLP

/// Fully connected network with biases, ReLU + dropout on hidden layers and
/// a softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    /// `(W, b)` per layer; `b` is a `1 x out` matrix.
    layers: Vec<(Matrix, Matrix)>,
    config: TrainConfig,
}

struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    masks: Vec<Option<DropoutMask>>,
    posteriors: Matrix,
}

const PREDICT_CHUNK: usize = 1024;

impl MlpModel {
    pub fn init(
        input_dim: usize,
        num_classes: usize,
        config: &TrainConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded(derive_seed(config.seed, "mlp-init"));
        let layers = layer_dims(input_dim, &config.hidden_dims, num_classes)
            .into_iter()
            .map(|(r, c)| (Matrix::glorot(r, c, &mut rng), Matrix::zeros(1, c)))
            .collect();
        Ok(Self {
            layers,
            config: config.clone(),
        })
    }

    pub fn from_layers(
        config: TrainConfig,
        layers: Vec<(Matrix, Matrix)>,
    ) -> Result<Self, ModelError> {
        for w in layers.windows(2) {
            if w[0].0.cols() != w[1].0.rows() {
                return Err(ModelError::Checkpoint(
                    "MLP layer widths do not chain".into(),
                ));
            }
        }
        if layers.iter().any(|(w, b)| b.shape() != (1, w.cols())) {
            return Err(ModelError::Checkpoint("MLP bias shape mismatch".into()));
        }
        if layers.len() != config.hidden_dims.len() + 1 {
            return Err(ModelError::Checkpoint(
                "MLP depth does not match config".into(),
            ));
        }
        Ok(Self { layers, config })
    }

    pub fn layers(&self) -> &[(Matrix, Matrix)] {
        &self.layers
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |(w, _)| w.cols())
    }

    /// Zeroes the output layer so every prediction is uniform.
    pub fn zero_output_layer(&mut self) {
        if let Some((w, b)) = self.layers.last_mut() {
            *w = Matrix::zeros(w.rows(), w.cols());
            *b = Matrix::zeros(1, b.cols());
        }
    }

    fn forward(
        layers: &[(Matrix, Matrix)],
        x: &Matrix,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<MlpCache, NumericError> {
        let last = layers.len() - 1;
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::new();
        let mut masks = Vec::new();
        let mut posteriors = Matrix::zeros(0, 0);
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = inputs[l].matmul(w)?;
            z.add_row_vector(b.data());
            if l == last {
                posteriors = row_softmax(&z);
            } else {
                let mut a = relu(&z);
                let mask = match dropout.as_mut() {
                    Some((rate, rng)) if *rate > 0.0 => {
                        let m = DropoutMask::sample(a.rows(), a.cols(), *rate, *rng);
                        a = m.apply(&a);
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                inputs.push(a);
            }
            pre.push(z);
        }
        Ok(MlpCache {
            inputs,
            pre,
            masks,
            posteriors,
        })
    }

    /// Gradients of the mean cross-entropy over all rows of the batch.
    fn backward(
        layers: &[(Matrix, Matrix)],
        cache: &MlpCache,
        labels: &[usize],
    ) -> Result<Vec<(Matrix, Matrix)>, NumericError> {
        let rows: Vec<usize> = (0..labels.len()).collect();
        let mut dz = softmax_cross_entropy_grad(&cache.posteriors, &rows, labels);
        let mut grads = vec![(Matrix::zeros(0, 0), Matrix::zeros(0, 0)); layers.len()];
        for l in (0..layers.len()).rev() {
            let gw = cache.inputs[l].t_matmul(&dz)?;
            let gb = Matrix::from_vec(1, dz.cols(), dz.sum_rows())?;
            grads[l] = (gw, gb);
            if l > 0 {
                let mut dh = dz.matmul_t(&layers[l].0)?;
                if let Some(mask) = &cache.masks[l - 1] {
                    dh = mask.apply(&dh);
                }
                relu_backward(&mut dh, &cache.pre[l - 1]);
                dz = dh;
            }
        }
        Ok(grads)
    }

    /// Evaluation-mode loss and gradients on `(x, labels)`, with parameters
    /// flattened as `[W0, b0, W1, b1, ...]`.
    pub fn loss_and_grads(
        flat_params: &[Matrix],
        x: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, Vec<Matrix>), ModelError> {
        let layers: Vec<(Matrix, Matrix)> = flat_params
            .chunks(2)
            .map(|c| (c[0].clone(), c[1].clone()))
            .collect();
        let cache = Self::forward(&layers, x, None)?;
        let rows: Vec<usize> = (0..labels.len()).collect();
        let loss = cross_entropy(&cache.posteriors, &rows, labels)?;
        let grads = Self::backward(&layers, &cache, labels)?;
        Ok((loss, grads.into_iter().flat_map(|(a, b)| [a, b]).collect()))
    }

    pub fn flat_params(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }

    /// Posteriors for a dense batch of rows.
    pub fn predict_matrix(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        if x.cols() != self.input_dim() {
            return Err(NumericError::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            ))
            .into());
        }
        Ok(Self::forward(&self.layers, x, None)?.posteriors)
    }

    /// Posteriors for every row of `source`, evaluated in chunks.
    pub fn predict_rows<S: RowSource + ?Sized>(&self, source: &S) -> Result<Matrix, ModelError> {
        let n = source.n_rows();
        let mut out = Matrix::zeros(n, self.num_classes());
        let ids: Vec<usize> = (0..n).collect();
        for chunk in ids.chunks(PREDICT_CHUNK) {
            let p = self.predict_matrix(&source.gather(chunk))?;
            for (i, &r) in chunk.iter().enumerate() {
                out.row_mut(r).copy_from_slice(p.row(i));
            }
        }
        Ok(out)
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Posteriors, ModelError> {
        let x = Matrix::from_vec(1, row.len(), row.to_vec())?;
        Ok(Posteriors(self.predict_matrix(&x)?.row(0).to_vec()))
    }
}

/// Trains an MLP on the given rows of `features`. Minibatches are reshuffled
/// every epoch when `config.batch_size` is set.
pub fn train_mlp<S: RowSource + ?Sized>(
    features: &S,
    labeled_ids: &[usize],
    labels: &[usize],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport), ModelError> {
    check_labels(labeled_ids, labels, features.n_rows(), num_classes)?;
    let mut model = MlpModel::init(features.n_cols(), num_classes, config)?;
    let mut rng = seeded(derive_seed(config.seed, "mlp-train"));
    let mut states: Vec<(AdamState, AdamState)> = model
        .layers
        .iter()
        .map(|(w, b)| (AdamState::for_param(w), AdamState::for_param(b)))
        .collect();

    let full_batch = config.batch_size.is_none_or(|b| b >= labeled_ids.len());
    let dense_all = full_batch.then(|| features.gather(labeled_ids));
    let eval_loss = |m: &MlpModel| -> Result<f64, ModelError> {
        let p = match &dense_all {
            Some(x) => m.predict_matrix(x)?,
            None => {
                let mut p = Matrix::zeros(labeled_ids.len(), num_classes);
                for (c, chunk) in labeled_ids.chunks(PREDICT_CHUNK).enumerate() {
                    let part = m.predict_matrix(&features.gather(chunk))?;
                    for i in 0..chunk.len() {
                        p.row_mut(c * PREDICT_CHUNK + i)
                            .copy_from_slice(part.row(i));
                    }
                }
                p
            }
        };
        let rows: Vec<usize> = (0..labels.len()).collect();
        Ok(cross_entropy(&p, &rows, labels)?)
    };

    let mut report = TrainReport {
        initial_loss: eval_loss(&model)?,
        ..TrainReport::default()
    };
    let mut order: Vec<usize> = (0..labeled_ids.len()).collect();
    for epoch in 0..config.epochs {
        let batches: Vec<Vec<usize>> = if full_batch {
            vec![order.clone()]
        } else {
            order.shuffle(&mut rng);
            order
                .chunks(config.batch_size.unwrap_or(order.len()))
                .map(<[usize]>::to_vec)
                .collect()
        };
        let mut epoch_loss = 0.0;
        for batch in &batches {
            let (x, y): (Matrix, Vec<usize>) = match &dense_all {
                Some(x) => (x.clone(), labels.to_vec()),
                None => {
                    let ids: Vec<usize> = batch.iter().map(|&i| labeled_ids[i]).collect();
                    (
                        features.gather(&ids),
                        batch.iter().map(|&i| labels[i]).collect(),
                    )
                }
            };
            let cache =
                MlpModel::forward(&model.layers, &x, Some((config.dropout_rate, &mut rng)))?;
            let rows: Vec<usize> = (0..y.len()).collect();
            let loss = cross_entropy(&cache.posteriors, &rows, &y)?;
            sgd_epoch_check(epoch, loss)?;
            epoch_loss += loss * y.len() as f64;
            let grads = MlpModel::backward(&model.layers, &cache, &y)?;
            for (((w, b), (gw, gb)), (sw, sb)) in
                model.layers.iter_mut().zip(&grads).zip(&mut states)
            {
                adam_step(w, gw, sw, config.learning_rate)
                    .and_then(|_| adam_step(b, gb, sb, config.learning_rate))
                    .map_err(|_| ModelError::Diverged { epoch, loss })?;
            }
        }
        report
            .epoch_losses
            .push(epoch_loss / labeled_ids.len() as f64);
    }
    report.final_loss = eval_loss(&model)?;
    Ok((model, report))
}

/// Reference model `g`: an MLP over node attributes only.
pub fn train_reference(
    attributes: &Matrix,
    labeled_ids: &[NodeId],
    labels: &[usize],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<MlpModel, ModelError> {
    Ok(train_mlp(attributes, labeled_ids, labels, num_classes, config)?.0)
}

/// Keeps the `k` largest entries (ties to the lower index), zeroes the rest
/// and renormalises. Inputs with at most `k` non-zero entries pass through
/// unchanged.
pub fn topk_truncate(p: &[f64], k: usize) -> Vec<f64> {
    let k = k.clamp(1, p.len().max(1));
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    // Nothing to drop: return the input as is, which keeps the operation
    // idempotent bit for bit.
    if idx[k..].iter().all(|&i| p[i] == 0.0) {
        return p.to_vec();
    }
    let mut out = vec![0.0; p.len()];
    let kept: f64 = idx[..k].iter().map(|&i| p[i]).sum();
    for &i in &idx[..k] {
        out[i] = if kept > 0.0 {
            p[i] / kept
        } else {
            1.0 / k as f64
        };
    }
    out
}

// ---------------------------------------------------------------------------
// Target model + checkpoints

/// A trained graph model used as the attack target.
#[derive(Clone, Debug)]
pub enum TargetModel {
    Gcn(GcnModel),
    Sage(SageModel),
}

impl TargetModel {
    pub fn train(
        kind: ModelKind,
        dataset: &Dataset,
        labeled_ids: &[NodeId],
        config: &TrainConfig,
    ) -> Result<(Self, TrainReport), ModelError> {
        match kind {
            ModelKind::Gcn => {
                train_gcn(dataset, labeled_ids, config).map(|(m, r)| (TargetModel::Gcn(m), r))
            }
            ModelKind::Sage => train_graphsage(dataset, labeled_ids, config)
                .map(|(m, r)| (TargetModel::Sage(m), r)),
            ModelKind::Mlp => Err(ModelError::Config(
                "an MLP cannot serve as a graph target".into(),
            )),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TargetModel::Gcn(_) => ModelKind::Gcn,
            TargetModel::Sage(_) => ModelKind::Sage,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            TargetModel::Gcn(m) => m.config(),
            TargetModel::Sage(m) => m.config(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (input_dim, params) = match self {
            TargetModel::Gcn(m) => (m.weights[0].rows(), m.weights.clone()),
            TargetModel::Sage(m) => (m.weights[0].0.rows(), m.flat_weights()),
        };
        Checkpoint::new(
            self.kind(),
            self.config().clone(),
            input_dim,
            self.num_classes(),
            &params,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Self, ModelError> {
        let params = ckpt.params()?;
        match ckpt.kind {
            ModelKind::Gcn => Ok(TargetModel::Gcn(GcnModel::from_weights(
                dataset,
                ckpt.config.clone(),
                params,
            )?)),
            ModelKind::Sage => {
                let pairs = params
                    .chunks(2)
                    .map(|c| (c[0].clone(), c[1].clone()))
                    .collect();
                Ok(TargetModel::Sage(SageModel::from_weights(
                    dataset,
                    ckpt.config.clone(),
                    pairs,
                )?))
            }
            ModelKind::Mlp => Err(ModelError::Checkpoint("checkpoint holds an MLP".into())),
        }
    }
}

impl NodeClassifier for TargetModel {
    fn node_count(&self) -> usize {
        match self {
            TargetModel::Gcn(m) => m.node_count(),
            TargetModel::Sage(m) => m.node_count(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            TargetModel::Gcn(m) => m.num_classes(),
            TargetModel::Sage(m) => m.num_classes(),
        }
    }

    fn posteriors(&self) -> Matrix {
        match self {
            TargetModel::Gcn(m) => m.posteriors(),
            TargetModel::Sage(m) => m.posteriors(),
        }
    }
}

/// Serialized model: JSON header plus base64 of little-endian `f64` weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(rename = "type")]
    pub kind: ModelKind,
    pub seed: u64,
    pub config: TrainConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub shapes: Vec<(usize, usize)>,
    pub weights: String,
}

impl Checkpoint {
    pub fn new(
        kind: ModelKind,
        config: TrainConfig,
        input_dim: usize,
        num_classes: usize,
        params: &[Matrix],
    ) -> Self {
        let mut bytes = Vec::with_capacity(params.iter().map(|m| m.data().len() * 8).sum());
        for m in params {
            for v in m.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Self {
            kind,
            seed: config.seed,
            config,
            input_dim,
            num_classes,
            shapes: params.iter().map(Matrix::shape).collect(),
            weights: B64.encode(bytes),
        }
    }

    pub fn params(&self) -> Result<Vec<Matrix>, ModelError> {
        let bytes = B64
            .decode(&self.weights)
            .map_err(|e| ModelError::Checkpoint(format!("weight payload: {e}")))?;
        let total: usize = self.shapes.iter().map(|(r, c)| r * c).sum();
        if bytes.len() != total * 8 {
            return Err(ModelError::Checkpoint(format!(
                "payload has {} bytes, shapes need {}",
                bytes.len(),
                total * 8
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        Ok(self
            .shapes
            .iter()
            .map(|&(r, c)| {
                Matrix::from_vec(r, c, values.by_ref().take(r * c).collect()).expect("sized")
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn from_mlp(model: &MlpModel) -> Self {
        Self::new(
            ModelKind::Mlp,
            model.config.clone(),
            model.input_dim(),
            model.num_classes(),
            &model.flat_params(),
        )
    }

    pub fn to_mlp(&self) -> Result<MlpModel, ModelError> {
        if self.kind != ModelKind::Mlp {
            return Err(ModelError::Checkpoint(
                "checkpoint does not hold an MLP".into(),
            ));
        }
        let params = self.params()?;
        let layers = params
            .chunks(2)
            .map(|c| (c[0].clone(), c[1].clone()))
            .collect();
        MlpModel::from_layers(self.config.clone(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::numerics::gradient_check;
    use crate::toy;
    use proptest::prelude::*;

    fn accuracy(p: &Matrix, ids: &[usize], labels: &[usize]) -> f64 {
        let hits = ids
            .iter()
            .zip(labels)
            .filter(|(&i, &y)| p.argmax_row(i) == y)
            .count();
        hits as f64 / ids.len() as f64
    }

    #[test]
    fn untrained_gcn_outputs_distributions() {
        let ds = toy::two_cliques();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::target(1)
        };
        let (m, r) = train_gcn(&ds, &[0, 4], &cfg).unwrap();
        assert!(r.epoch_losses.is_empty());
        let p = m.posteriors();
        for i in 0..p.rows() {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gcn_separates_two_cliques() {
        let ds = toy::two_cliques();
        let labeled = [0, 4];
        let (m, report) = train_gcn(&ds, &labeled, &TrainConfig::target(3)).unwrap();
        assert!(report.final_loss <= report.initial_loss);
        let p = m.posteriors();
        assert_eq!(accuracy(&p, &labeled, &[0, 1]), 1.0);
        for node in 0..8 {
            assert_eq!(p.argmax_row(node), ds.labels[node].unwrap(), "node {node}");
        }
    }

    #[test]
    fn gcn_training_is_reproducible() {
        let ds = toy::two_cliques();
        let (a, _) = train_gcn(&ds, &[0, 4], &TrainConfig::target(5)).unwrap();
        let (b, _) = train_gcn(&ds, &[0, 4], &TrainConfig::target(5)).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn gcn_rejects_empty_label_set_and_bad_dropout() {
        let ds = toy::two_cliques();
        assert!(train_gcn(&ds, &[], &TrainConfig::target(0)).is_err());
        let cfg = TrainConfig {
            dropout_rate: 1.0,
            ..TrainConfig::target(0)
        };
        assert!(matches!(
            train_gcn(&ds, &[0], &cfg),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn gcn_divergence_carries_epoch() {
        let mut ds = toy::two_cliques();
        ds.attributes.set(0, 0, 1e308);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            ..TrainConfig::target(0)
        };
        match train_gcn(&ds, &[0, 4], &cfg) {
            Err(ModelError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn gcn_two_hop_receptive_field() {
        // Path 0-1-2-3-4-5: node 0 sees nodes within 2 hops only.
        let base = toy::path(6);
        let (model, _) = train_gcn(&base, &[0, 5], &TrainConfig::target(2)).unwrap();
        let weights = model.weights().to_vec();
        let before = model.posteriors();
        for (changed, expect_change) in [(2usize, true), (3usize, false)] {
            let mut ds = base.clone();
            for c in 0..ds.attr_dim() {
                let v = ds.attributes.get(changed, c);
                ds.attributes.set(changed, c, v + 1.5);
            }
            let m = GcnModel::from_weights(&ds, model.config().clone(), weights.clone()).unwrap();
            let after = m.posteriors();
            let moved = before.row(0).iter().zip(after.row(0)).any(|(a, b)| a != b);
            assert_eq!(moved, expect_change, "perturbing node {changed}");
        }
    }

    #[test]
    fn gcn_gradient_check() {
        let ds = toy::planted_partition(
            &toy::PlantedConfig {
                nodes_per_class: 6,
                classes: 3,
                attr_dim: 5,
                ..Default::default()
            },
            4,
        );
        let cfg = TrainConfig {
            hidden_dims: vec![4, 3],
            ..TrainConfig::target(8)
        };
        let model = GcnModel::init(&ds, &cfg).unwrap();
        let ids = [0, 3, 7, 12, 16];
        let labels = ds.labels_of(&ids).unwrap();
        let report = gradient_check(
            |w| model.loss_and_grads(w, &ids, &labels).unwrap(),
            model.weights(),
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn sage_gradient_check() {
        let ds = toy::planted_partition(
            &toy::PlantedConfig {
                nodes_per_class: 5,
                classes: 2,
                attr_dim: 4,
                ..Default::default()
            },
            9,
        );
        let mut ds = ds;
        // Include an isolated node.
        let edges: Vec<_> = ds
            .graph
            .edges()
            .iter()
            .copied()
            .filter(|&(u, v)| u != 0 && v != 0)
            .collect();
        ds.graph = Graph::new(ds.node_count(), edges).unwrap();
        let cfg = TrainConfig {
            hidden_dims: vec![3],
            ..TrainConfig::target(1)
        };
        let model = SageModel::init(&ds, &cfg).unwrap();
        let ids = [0, 2, 5, 8];
        let labels = ds.labels_of(&ids).unwrap();
        let report = gradient_check(
            |w| model.loss_and_grads(w, &ids, &labels).unwrap(),
            &model.flat_weights(),
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn sage_handles_isolated_nodes_and_separates_cliques() {
        let mut ds = toy::two_cliques();
        let n = ds.node_count();
        // Append an isolated ninth node.
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| ds.attributes.row(i).to_vec()).collect();
        rows.push(vec![0.5, 0.5]);
        ds = Dataset::new(
            "cliques+1",
            Graph::new(n + 1, ds.graph.edges().iter().copied()).unwrap(),
            Matrix::from_rows(&rows).unwrap(),
            ds.labels.iter().copied().chain([None]).collect(),
            2,
        )
        .unwrap();
        let cfg0 = TrainConfig {
            epochs: 0,
            ..TrainConfig::target(0)
        };
        let (m0, _) = train_graphsage(&ds, &[0, 4], &cfg0).unwrap();
        assert!(m0.posteriors().is_finite());
        let (m, _) = train_graphsage(&ds, &[0, 4], &TrainConfig::target(0)).unwrap();
        let p = m.posteriors();
        assert!(p.is_finite());
        assert_eq!(accuracy(&p, &[0, 4], &[0, 1]), 1.0);
    }

    fn xor() -> (Matrix, Vec<usize>) {
        (
            Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]).unwrap(),
            vec![0, 1, 1, 0],
        )
    }

    #[test]
    fn mlp_learns_xor() {
        let (x, y) = xor();
        let cfg = TrainConfig {
            hidden_dims: vec![16, 16],
            dropout_rate: 0.0,
            ..TrainConfig::target(0)
        };
        let (m, report) = train_mlp(&x, &[0, 1, 2, 3], &y, 2, &cfg).unwrap();
        assert!(report.final_loss < report.initial_loss);
        let p = m.predict_matrix(&x).unwrap();
        assert_eq!(accuracy(&p, &[0, 1, 2, 3], &y), 1.0);
    }

    #[test]
    fn mlp_single_class_and_untrained() {
        let (x, _) = xor();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::target(0)
        };
        let (m, _) = train_mlp(&x, &[0, 1, 2, 3], &[1, 1, 1, 1], 2, &cfg).unwrap();
        let p = m.predict_matrix(&x).unwrap();
        assert!((0..4).all(|i| (p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9));

        let (m, report) =
            train_mlp(&x, &[0, 1, 2, 3], &[1, 1, 1, 1], 2, &TrainConfig::target(0)).unwrap();
        assert!(report.final_loss < 0.05, "{report:?}");
        let p = m.predict_matrix(&x).unwrap();
        assert!((0..4).all(|i| p.argmax_row(i) == 1));
    }

    #[test]
    fn zeroed_output_layer_is_uniform() {
        let mut m = MlpModel::init(3, 2, &TrainConfig::target(0)).unwrap();
        m.zero_output_layer();
        assert_eq!(m.predict_row(&[0.3, -2.0, 5.0]).unwrap().0, vec![0.5, 0.5]);
    }

    #[test]
    fn mlp_gradient_check() {
        let x = Matrix::from_rows(&[
            [0.2, -1.0, 0.5],
            [1.5, 0.3, -0.7],
            [-0.4, 0.9, 1.1],
            [0.0, -0.6, 0.8],
        ])
        .unwrap();
        let y = [0, 2, 1, 2];
        for hidden in [vec![5, 4], vec![6, 5, 4]] {
            let cfg = TrainConfig {
                hidden_dims: hidden,
                ..TrainConfig::attack(3)
            };
            let mut m = MlpModel::init(3, 3, &cfg).unwrap();
            // Non-zero biases so their gradients are exercised too.
            for (_, b) in &mut m.layers {
                for (i, v) in b.data_mut().iter_mut().enumerate() {
                    *v = 0.05 * (i as f64 + 1.0);
                }
            }
            let report = gradient_check(
                |p| MlpModel::loss_and_grads(p, &x, &y).unwrap(),
                &m.flat_params(),
                1e-4,
            );
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn minibatch_training_is_reproducible() {
        let ds = toy::planted_partition(&toy::PlantedConfig::default(), 1);
        let ids: Vec<usize> = (0..ds.node_count()).collect();
        let labels = ds.labels_of(&ids).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::attack(4)
        };
        let (a, _) = train_mlp(&ds.attributes, &ids, &labels, ds.num_classes, &cfg).unwrap();
        let (b, _) = train_mlp(&ds.attributes, &ids, &labels, ds.num_classes, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn topk_examples() {
        let p = [0.5, 0.3, 0.2];
        assert_eq!(topk_truncate(&p, 3), p.to_vec());
        let t = topk_truncate(&p, 2);
        assert!((t[0] - 0.625).abs() < 1e-12 && (t[1] - 0.375).abs() < 1e-12 && t[2] == 0.0);
        assert_eq!(topk_truncate(&[0.4, 0.4, 0.2], 1), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn predict_rejects_unknown_node() {
        let ds = toy::two_cliques();
        let m = GcnModel::init(&ds, &TrainConfig::target(0)).unwrap();
        assert!(matches!(
            m.predict(8),
            Err(ModelError::UnknownNode {
                node: 8,
                node_count: 8
            })
        ));
        assert!(m.predict(7).unwrap().is_distribution(1e-9));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let ds = toy::two_cliques();
        for kind in [ModelKind::Gcn, ModelKind::Sage] {
            let (m, _) = TargetModel::train(kind, &ds, &[0, 4], &TrainConfig::target(7)).unwrap();
            let ck = m.checkpoint();
            let back = Checkpoint::from_json(&ck.to_json()).unwrap();
            assert_eq!(back, ck);
            let restored = TargetModel::from_checkpoint(&back, &ds).unwrap();
            assert_eq!(restored.posteriors(), m.posteriors());
        }
        let m = MlpModel::init(4, 3, &TrainConfig::attack(1)).unwrap();
        assert_eq!(Checkpoint::from_mlp(&m).to_mlp().unwrap(), m);
    }

    proptest! {
        #[test]
        fn topk_is_idempotent_and_normalised(
            raw in proptest::collection::vec(0.0f64..1.0, 2..9),
            k in 1usize..9,
        ) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = raw.iter().map(|x| (x + 1e-9 / raw.len() as f64) / s).collect();
            let k = k.min(p.len());
            let once = topk_truncate(&p, k);
            prop_assert_eq!(topk_truncate(&once, k), once.clone());
            prop_assert!((once.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(once.iter().filter(|&&x| x > 0.0).count() <= k);
        }
    }
}
