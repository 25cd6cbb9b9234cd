//! Feed-forward classifier with manual backpropagation.
//!
//! Layers compute `φ(X W + b)` with `W` stored as `input_dim x output_dim`.
//! The feature layer is the last hidden layer; a regulariser gradient on its
//! post-activation outputs is added to the backpropagated gradient there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::diversity::{j_direct, wld_reg_loss, RegularizerOutput, RegularizerSpec};
use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, matmul_tn, matmul_unchecked, Matrix};
use crate::similarity::{pairwise_similarity, ActivationBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    // Derivative expressed through the pre- and post-activation values.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: Matrix::zeros(spec.input_dim, spec.output_dim),
            bias: vec![0.0; spec.output_dim],
        }
    }
}

/// A multi-layer perceptron whose last layer produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Zero-initialised network. Needs at least one hidden layer (the
    /// feature layer) plus the output layer, with chaining dimensions.
    pub fn new(specs: &[LayerSpec]) -> Result<Self> {
        if specs.len() < 2 {
            return Err(Error::InvalidArgument(
                "network needs at least one hidden layer and an output layer".into(),
            ));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.input_dim == 0 || s.output_dim == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && specs[i - 1].output_dim != s.input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} outputs {} but layer {i} expects {}",
                    i - 1,
                    specs[i - 1].output_dim,
                    s.input_dim
                )));
            }
        }
        Ok(Self {
            layers: specs.iter().copied().map(Layer::zeros).collect(),
        })
    }

    /// Randomly initialised network: He-uniform for ReLU layers,
    /// Xavier-uniform otherwise, zero biases.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut mlp = Self::new(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut mlp.layers {
            let (fan_in, fan_out) = (layer.spec.input_dim as f64, layer.spec.output_dim as f64);
            let limit = match layer.spec.activation {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Tanh | Activation::Identity => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            for w in layer.weights.as_mut_slice() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(mlp)
    }

    /// `input -> hidden... -> num_classes` classifier with one activation for
    /// every hidden layer and identity logits.
    pub fn classifier(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            specs.push(LayerSpec {
                input_dim: prev,
                output_dim: h,
                activation,
            });
            prev = h;
        }
        specs.push(LayerSpec {
            input_dim: prev,
            output_dim: num_classes,
            activation: Activation::Identity,
        });
        Self::init(&specs, seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Index of the last hidden layer.
    pub fn feature_layer_index(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn num_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardTrace> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().unwrap_or(batch);
            let mut z = matmul_unchecked(input, &layer.weights);
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let act = layer.spec.activation;
            let a = z.map(|v| act.apply(v));
            pre.push(z);
            post.push(a);
        }
        if !post[post.len() - 1].is_finite() {
            return Err(Error::NonFinite("forward"));
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            pre,
            post,
            feature_layer: self.feature_layer_index(),
        })
    }

    /// Backpropagates `loss_grad` (gradient on the logits) and adds
    /// `reg_grad_feature` to the gradient arriving at the feature layer's
    /// outputs.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        loss_grad: &Matrix,
        reg_grad_feature: &Matrix,
    ) -> Result<Gradients> {
        let n_layers = self.layers.len();
        if loss_grad.shape() != trace.logits().shape() {
            return Err(Error::DimensionMismatch(format!(
                "loss gradient is {}x{}, logits are {}x{}",
                loss_grad.rows(),
                loss_grad.cols(),
                trace.logits().rows(),
                trace.logits().cols()
            )));
        }
        let feature = self.feature_layer_index();
        if reg_grad_feature.shape() != trace.post[feature].shape() {
            return Err(Error::DimensionMismatch(format!(
                "regulariser gradient is {}x{}, feature layer is {}x{}",
                reg_grad_feature.rows(),
                reg_grad_feature.cols(),
                trace.post[feature].rows(),
                trace.post[feature].cols()
            )));
        }

        let mut weights = vec![Matrix::zeros(0, 0); n_layers];
        let mut biases = vec![Vec::new(); n_layers];
        let mut upstream = loss_grad.clone();
        for idx in (0..n_layers).rev() {
            if idx == feature {
                upstream.add_scaled(reg_grad_feature, 1.0)?;
            }
            let layer = &self.layers[idx];
            let act = layer.spec.activation;
            let (pre, post) = (&trace.pre[idx], &trace.post[idx]);
            let mut delta = upstream;
            for ((d, &z), &a) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(pre.as_slice())
                .zip(post.as_slice())
            {
                *d *= act.derivative(z, a);
            }
            let input = if idx == 0 { &trace.input } else { &trace.post[idx - 1] };
            weights[idx] = matmul_tn(input, &delta);
            let mut db = vec![0.0; delta.cols()];
            for i in 0..delta.rows() {
                for (b, v) in db.iter_mut().zip(delta.row(i)) {
                    *b += v;
                }
            }
            biases[idx] = db;
            upstream = if idx > 0 {
                matmul_nt(&delta, &layer.weights)
            } else {
                Matrix::zeros(0, 0)
            };
        }
        Ok(Gradients { weights, biases })
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let trace = self.forward(batch)?;
        Ok(argmax_rows(trace.logits()))
    }

    /// Misclassification rate on `ds`, in percent.
    pub fn error_rate(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        let predictions = self.predict(&ds.features)?;
        let wrong = predictions.iter().zip(&ds.labels).filter(|(p, y)| p != y).count();
        Ok(100.0 * wrong as f64 / ds.len() as f64)
    }

    /// All weights then all biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`Mlp::parameters`].
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum();
        if params.len() != total {
            return Err(Error::DimensionMismatch(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

pub(crate) fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Per-layer values from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
    feature_layer: usize,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        &self.post[self.post.len() - 1]
    }

    /// Post-activation outputs of the feature layer.
    pub fn features(&self) -> Result<ActivationBatch> {
        ActivationBatch::new(self.post[self.feature_layer].clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    /// Same ordering as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / m`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (m, k) = logits.shape();
    if labels.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} logit rows but {} labels",
            labels.len()
        )));
    }
    if m == 0 {
        return Err(Error::BatchTooSmall { needed: 1, got: 0 });
    }
    let mut grad = Matrix::zeros(m, k);
    let mut loss = 0.0;
    let inv_m = 1.0 / m as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: k,
            });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (g, v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = (v - log_z).exp() * inv_m;
        }
        grad[(i, y)] -= inv_m;
    }
    Ok((loss * inv_m, grad))
}

/// SGD with momentum, decoupled-from-bias weight decay, and a milestone
/// learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, multiplier)`: from `epoch` on, the rate is multiplied by
    /// `multiplier` (cumulatively across milestones).
    pub schedule: Vec<(usize, f64)>,
    velocity_w: Vec<Matrix>,
    velocity_b: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(
        model: &Mlp,
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
        schedule: Vec<(usize, f64)>,
    ) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be finite and >= 0, got {weight_decay}"
            )));
        }
        if schedule.iter().any(|&(_, f)| !(f.is_finite() && f > 0.0)) {
            return Err(Error::InvalidArgument(
                "schedule multipliers must be finite and > 0".into(),
            ));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            schedule,
            velocity_w: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            velocity_b: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        })
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|&&(e, _)| e <= epoch)
            .fold(self.learning_rate, |lr, &(_, f)| lr * f)
    }
}

/// `v ← μv − lr (g + wd w)`, `w ← w + v`. Biases are not decayed.
pub fn sgd_step(model: &mut Mlp, grads: &Gradients, opt: &mut OptimizerState, epoch: usize) -> Result<()> {
    if grads.weights.len() != model.layers.len() || opt.velocity_w.len() != model.layers.len() {
        return Err(Error::DimensionMismatch(
            "gradient/optimizer layer count differs from model".into(),
        ));
    }
    let lr = opt.lr_at(epoch);
    let (mu, wd) = (opt.momentum, opt.weight_decay);
    for (idx, layer) in model.layers.iter_mut().enumerate() {
        let gw = &grads.weights[idx];
        let gb = &grads.biases[idx];
        if gw.shape() != layer.weights.shape() || gb.len() != layer.bias.len() {
            return Err(Error::DimensionMismatch(format!("gradient shape differs at layer {idx}")));
        }
        let vw = opt.velocity_w[idx].as_mut_slice();
        for ((w, v), g) in layer.weights.as_mut_slice().iter_mut().zip(vw).zip(gw.as_slice()) {
            *v = mu * *v - lr * (g + wd * *w);
            *w += *v;
        }
        for ((b, v), g) in layer.bias.iter_mut().zip(&mut opt.velocity_b[idx]).zip(gb) {
            *v = mu * *v - lr * g;
            *b += *v;
        }
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("sgd_step"));
    }
    Ok(())
}

/// Losses for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub task_loss: f64,
    pub reg: RegularizerOutput,
    /// `task_loss + reg.loss`.
    pub total_loss: f64,
    pub wrong: usize,
    pub batch_size: usize,
    /// Direct similarity sum of the feature layer (diagnostic only).
    pub j_direct: Option<f64>,
}

/// Forward pass, task and regulariser losses, backward pass, and one SGD step.
pub fn train_step(
    model: &mut Mlp,
    x: &Matrix,
    labels: &[usize],
    spec: &RegularizerSpec,
    opt: &mut OptimizerState,
    epoch: usize,
) -> Result<StepMetrics> {
    let (step, grads) = evaluate_step(model, x, labels, spec)?;
    sgd_step(model, &grads, opt, epoch)?;
    Ok(step)
}

/// Everything in [`train_step`] except the update; returns the gradients of
/// the augmented loss.
pub fn evaluate_step(
    model: &Mlp,
    x: &Matrix,
    labels: &[usize],
    spec: &RegularizerSpec,
) -> Result<(StepMetrics, Gradients)> {
    let trace = model.forward(x)?;
    let (task_loss, loss_grad) = cross_entropy(trace.logits(), labels)?;
    let features = trace.features()?;
    let reg = wld_reg_loss(&features, spec)?;
    let j_direct = if features.units() >= 2 {
        Some(j_direct(&pairwise_similarity(&features, spec.gamma)?).0)
    } else {
        None
    };
    let grads = model.backward(&trace, &loss_grad, &reg.grad_acts)?;
    let wrong = argmax_rows(trace.logits())
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count();
    let total_loss = task_loss + reg.loss;
    Ok((
        StepMetrics {
            task_loss,
            reg,
            total_loss,
            wrong,
            batch_size: labels.len(),
            j_direct,
        },
        grads,
    ))
}

/// Batch-averaged statistics for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    /// Percent of training samples misclassified during the epoch.
    pub train_error: f64,
    pub j_direct: Option<f64>,
    pub batches: usize,
}

/// One pass over `ds` in mini-batches, reshuffled from `(seed, epoch)`.
pub fn train_epoch(
    model: &mut Mlp,
    ds: &Dataset,
    spec: &RegularizerSpec,
    opt: &mut OptimizerState,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<EpochMetrics> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut task = 0.0;
    let mut reg = 0.0;
    let mut total = 0.0;
    let mut wrong = 0;
    let mut j_sum = 0.0;
    let mut j_count = 0usize;
    let mut n_batches = 0usize;
    for (x, y) in batches(ds, batch_size, seed, epoch)? {
        let step = train_step(model, &x, &y, spec, opt, epoch)?;
        task += step.task_loss;
        reg += step.reg.loss;
        total += step.total_loss;
        wrong += step.wrong;
        if let Some(j) = step.j_direct {
            j_sum += j;
            j_count += 1;
        }
        n_batches += 1;
    }
    let nb = n_batches as f64;
    Ok(EpochMetrics {
        epoch,
        task_loss: task / nb,
        reg_loss: reg / nb,
        total_loss: total / nb,
        train_error: 100.0 * wrong as f64 / ds.len() as f64,
        j_direct: (j_count > 0).then(|| j_sum / j_count as f64),
        batches: n_batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::diversity::Variant;

    fn single(act: Activation, w: Matrix) -> Mlp {
        let d = w.rows();
        let specs = [
            LayerSpec { input_dim: d, output_dim: w.cols(), activation: act },
            LayerSpec { input_dim: w.cols(), output_dim: 1, activation: Activation::Identity },
        ];
        let mut mlp = Mlp::new(&specs).unwrap();
        mlp.layers[0].weights = w;
        mlp
    }

    #[test]
    fn identity_and_relu_forward() {
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        let t = single(Activation::Identity, Matrix::identity(2)).forward(&x).unwrap();
        assert_eq!(t.post[0], x);
        let t = single(Activation::Relu, Matrix::identity(2)).forward(&x).unwrap();
        assert_eq!(t.post[0].as_slice(), &[0.0, 2.0]);
        assert_eq!(t.features().unwrap().values().as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let mlp = Mlp::classifier(3, &[4], Activation::Tanh, 2, 9).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [0.1, 0.2, 0.3]]).unwrap();
        let t = mlp.forward(&x).unwrap();
        let (l0, l1) = (&mlp.layers[0], &mlp.layers[1]);
        for s in 0..2 {
            let mut h = [0.0; 4];
            for (u, hu) in h.iter_mut().enumerate() {
                let mut z = l0.bias[u];
                for i in 0..3 {
                    z += x[(s, i)] * l0.weights[(i, u)];
                }
                *hu = z.tanh();
            }
            for o in 0..2 {
                let mut z = l1.bias[o];
                for (u, hu) in h.iter().enumerate() {
                    z += hu * l1.weights[(u, o)];
                }
                assert!((t.logits()[(s, o)] - z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mlp = Mlp::classifier(3, &[4], Activation::Relu, 2, 0).unwrap();
        assert!(matches!(mlp.forward(&Matrix::zeros(1, 2)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = cross_entropy(&Matrix::zeros(2, 5), &[0, 3]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
        let (l, _) = cross_entropy(&Matrix::from_rows(&[[1000.0, 0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&Matrix::zeros(1, 3), &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let logits = Matrix::from_rows(&[
            [0.3, -1.2, 0.8, 0.1],
            [1.5, 0.2, -0.4, 0.0],
            [-0.7, 0.9, 0.3, 2.1],
        ])
        .unwrap();
        let labels = [2, 0, 1];
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut p = logits.clone();
                p[(i, j)] += h;
                let mut q = logits.clone();
                q[(i, j)] -= h;
                let fd = (cross_entropy(&p, &labels).unwrap().0 - cross_entropy(&q, &labels).unwrap().0) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_reg_grad_is_plain_backprop_and_hook_is_local() {
        let mlp = Mlp::classifier(3, &[5, 4], Activation::Tanh, 3, 1).unwrap();
        let x = Matrix::from_rows(&[[0.2, -0.1, 0.5], [1.0, 0.3, -0.8]]).unwrap();
        let t = mlp.forward(&x).unwrap();
        let (_, lg) = cross_entropy(t.logits(), &[0, 2]).unwrap();
        let zero = Matrix::zeros(2, 4);
        let plain = mlp.backward(&t, &lg, &zero).unwrap();
        assert!(plain.flatten().iter().any(|v| *v != 0.0));

        let reg = Matrix::filled(2, 4, 0.3);
        let g = mlp.backward(&t, &Matrix::zeros(2, 3), &reg).unwrap();
        assert!(g.weights[2].as_slice().iter().all(|v| *v == 0.0));
        assert!(g.biases[2].iter().all(|v| *v == 0.0));
        assert!(g.weights[1].as_slice().iter().any(|v| *v != 0.0));
        assert!(g.weights[0].as_slice().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn sgd_examples() {
        let mut mlp = Mlp::classifier(2, &[3], Activation::Relu, 2, 4).unwrap();
        let before = mlp.parameters();
        let grads = Gradients {
            weights: mlp.layers.iter().map(|l| Matrix::filled(l.weights.rows(), l.weights.cols(), 0.5)).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.5; l.bias.len()]).collect(),
        };
        let mut opt = OptimizerState::new(&mlp, 0.0, 0.9, 1e-4, vec![]).unwrap();
        sgd_step(&mut mlp, &grads, &mut opt, 0).unwrap();
        assert_eq!(mlp.parameters(), before);

        let mut opt = OptimizerState::new(&mlp, 0.1, 0.0, 0.0, vec![]).unwrap();
        sgd_step(&mut mlp, &grads, &mut opt, 0).unwrap();
        for (a, b) in mlp.parameters().iter().zip(&before) {
            assert_eq!(*a, b - 0.1 * 0.5);
        }
    }

    #[test]
    fn momentum_on_quadratic_matches_hand_iteration() {
        // f(w) = ½ w² for a single weight; gradient is w.
        let specs = [
            LayerSpec { input_dim: 1, output_dim: 1, activation: Activation::Identity },
            LayerSpec { input_dim: 1, output_dim: 1, activation: Activation::Identity },
        ];
        let mut mlp = Mlp::new(&specs).unwrap();
        mlp.layers[0].weights[(0, 0)] = 1.0;
        let mut opt = OptimizerState::new(&mlp, 0.1, 0.9, 0.0, vec![]).unwrap();
        let grad_of = |m: &Mlp| Gradients {
            weights: vec![Matrix::filled(1, 1, m.layers[0].weights[(0, 0)]), Matrix::zeros(1, 1)],
            biases: vec![vec![0.0], vec![0.0]],
        };
        // v1 = -0.1, w1 = 0.9; v2 = 0.9*(-0.1) - 0.1*0.9 = -0.18, w2 = 0.72.
        let g = grad_of(&mlp);
        sgd_step(&mut mlp, &g, &mut opt, 0).unwrap();
        assert!((mlp.layers[0].weights[(0, 0)] - 0.9).abs() < 1e-15);
        let g = grad_of(&mlp);
        sgd_step(&mut mlp, &g, &mut opt, 0).unwrap();
        assert!((mlp.layers[0].weights[(0, 0)] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_cumulative() {
        let mlp = Mlp::classifier(2, &[2], Activation::Relu, 2, 0).unwrap();
        let opt = OptimizerState::new(&mlp, 0.1, 0.9, 0.0, vec![(60, 0.2), (120, 0.2), (160, 0.2)]).unwrap();
        assert_eq!(opt.lr_at(0), 0.1);
        assert!((opt.lr_at(60) - 0.02).abs() < 1e-15);
        assert!((opt.lr_at(130) - 0.004).abs() < 1e-15);
        assert!((opt.lr_at(199) - 0.0008).abs() < 1e-15);
    }

    #[test]
    fn optimizer_validation() {
        let mlp = Mlp::classifier(2, &[2], Activation::Relu, 2, 0).unwrap();
        assert!(OptimizerState::new(&mlp, 0.1, 1.0, 0.0, vec![]).is_err());
        assert!(OptimizerState::new(&mlp, 0.1, 0.5, -1.0, vec![]).is_err());
        assert!(OptimizerState::new(&mlp, f64::NAN, 0.5, 0.0, vec![]).is_err());
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let x = Matrix::from_rows(&[
            [0.3, -0.5, 0.8],
            [-0.2, 0.9, 0.1],
            [0.7, 0.4, -0.6],
            [-0.9, -0.3, 0.5],
        ])
        .unwrap();
        let labels = [0, 1, 1, 0];
        for variant in Variant::ALL {
            let mlp = Mlp::classifier(3, &[6, 5], Activation::Tanh, 2, 3).unwrap();
            let spec = RegularizerSpec::new(variant).with_lambdas(0.5, 0.05).with_gamma(2.0);
            let (_, grads) = evaluate_step(&mlp, &x, &labels, &spec).unwrap();
            let analytic = grads.flatten();
            let params = mlp.parameters();
            let loss_at = |p: &[f64]| {
                let mut m = mlp.clone();
                m.set_parameters(p).unwrap();
                evaluate_step(&m, &x, &labels, &spec).unwrap().0.total_loss
            };
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += h;
                let mut q = params.clone();
                q[i] -= h;
                let fd = (loss_at(&p) - loss_at(&q)) / (2.0 * h);
                scale = scale.max(fd.abs()).max(analytic[i].abs());
                worst = worst.max((fd - analytic[i]).abs());
            }
            assert!(worst / scale <= 1e-5, "{variant}: {:e}", worst / scale);
        }
    }

    #[test]
    fn loss_decomposes_per_batch() {
        let ds = gen_blobs(20, 3, 4, 0.5, 2).unwrap();
        let mlp = Mlp::classifier(4, &[8, 8], Activation::Relu, 3, 2).unwrap();
        for variant in Variant::ALL {
            let spec = RegularizerSpec::new(variant).with_lambdas(0.01, 0.002);
            let (s, _) = evaluate_step(&mlp, &ds.features, &ds.labels, &spec).unwrap();
            let expected = match variant {
                Variant::None => s.task_loss,
                Variant::DeCov => s.task_loss + spec.lambda1 * s.reg.diversity,
                _ => s.task_loss + spec.lambda1 * s.reg.diversity + spec.lambda2 * s.reg.penalty,
            };
            assert!((s.total_loss - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_lambda_direct_tracks_unregularised_run() {
        let ds = gen_blobs(30, 2, 3, 0.8, 5).unwrap();
        let run = |spec: RegularizerSpec| {
            let mut mlp = Mlp::classifier(3, &[8, 8], Activation::Relu, 2, 7).unwrap();
            let mut opt = OptimizerState::new(&mlp, 0.05, 0.9, 1e-4, vec![]).unwrap();
            for epoch in 0..5 {
                train_epoch(&mut mlp, &ds, &spec, &mut opt, 16, 7, epoch).unwrap();
            }
            mlp.parameters()
        };
        let a = run(RegularizerSpec::none());
        let b = run(RegularizerSpec::new(Variant::Direct).with_lambdas(0.0, 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn separable_blobs_reach_zero_training_error() {
        let ds = gen_blobs(50, 2, 2, 0.3, 13).unwrap();
        let mut mlp = Mlp::classifier(2, &[16, 16], Activation::Relu, 2, 13).unwrap();
        let mut opt = OptimizerState::new(&mlp, 0.05, 0.9, 1e-4, vec![]).unwrap();
        for epoch in 0..50 {
            train_epoch(&mut mlp, &ds, &RegularizerSpec::none(), &mut opt, 16, 13, epoch).unwrap();
        }
        assert_eq!(mlp.error_rate(&ds).unwrap(), 0.0);
    }

    #[test]
    fn untrained_model_is_unchanged() {
        let a = Mlp::classifier(3, &[4, 4], Activation::Relu, 2, 99).unwrap();
        let b = Mlp::classifier(3, &[4, 4], Activation::Relu, 2, 99).unwrap();
        assert_eq!(a.parameters(), b.parameters());
    }
}
