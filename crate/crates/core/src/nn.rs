//! Feedforward networks: forward pass, exact backpropagation, momentum SGD
//! with step decay, L1 penalties and a binary checkpoint format.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmatrix::{GStar, Variant};
use crate::linalg::{ensure_finite, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
    /// Row-wise softmax; only valid on the last layer of a model without a terminal map.
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            2 => Some(Activation::Sigmoid),
            3 => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Linear => z.clone(),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Softmax => softmax_rows(z.view()),
        }
    }

    /// Elementwise derivative given pre- and post-activation values.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Softmax => unreachable!("softmax has no elementwise derivative"),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(z: ArrayView2<f64>) -> Matrix {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn log_softmax_at(row: ndarray::ArrayView1<f64>, index: usize) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[index] - lse
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out×in
    pub weights: Matrix,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform He (fan-in) for ReLU layers, uniform Glorot (fan-average) otherwise.
    Scaled,
    Zero,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    /// Fixed map applied after the last layer: `output = a_last · G*`.
    pub terminal: Option<GStar>,
}

impl MlpModel {
    /// `widths` lists every layer's output size with its activation.
    pub fn new(
        input: usize,
        widths: &[(usize, Activation)],
        terminal: Option<GStar>,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input == 0 || widths.is_empty() || widths.iter().any(|w| w.0 == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for &(out, activation) in widths {
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + out) as f64).sqrt(),
            };
            let weights = match init {
                Init::Zero => Matrix::zeros((out, fan_in)),
                Init::Scaled => Matrix::from_shape_fn((out, fan_in), |_| rng.random_range(-limit..=limit)),
            };
            layers.push(DenseLayer { weights, bias: Array1::zeros(out), activation });
            fan_in = out;
        }
        let model = MlpModel { layers, terminal };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape(format!("layer {i}: bias length differs from output size")));
            }
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::Shape(format!("layer {i}: input size differs from previous output")));
            }
            if l.activation == Activation::Softmax && (i + 1 != self.layers.len() || self.terminal.is_some()) {
                return Err(Error::InvalidConfig("softmax is only allowed as the output layer".into()));
            }
        }
        if let Some(t) = &self.terminal {
            if t.m() != self.attribute_dim() {
                return Err(Error::Shape(format!(
                    "terminal map expects {} inputs, last layer has {}",
                    t.m(),
                    self.attribute_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Width of the last trainable layer.
    pub fn attribute_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.terminal.as_ref().map_or(self.attribute_dim(), GStar::n)
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Activations> {
        forward_pass(self, batch)
    }
}

/// Every intermediate value of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `inputs[0]` is the batch; `inputs[i]` the input to layer `i`.
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
    /// `post.last()` times the terminal map, or `post.last()` itself.
    pub output: Matrix,
}

impl Activations {
    /// Output of the last trainable layer.
    pub fn attributes(&self) -> &Matrix {
        self.post.last().expect("non-empty")
    }
}

pub fn forward_pass(model: &MlpModel, batch: ArrayView2<f64>) -> Result<Activations> {
    if batch.ncols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, model expects {}",
            batch.ncols(),
            model.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(model.layers.len());
    let mut x = batch.to_owned();
    for layer in &model.layers {
        let z = x.dot(&layer.weights.t()) + &layer.bias;
        let a = layer.activation.apply(&z);
        inputs.push(x);
        pre.push(z);
        x = a.clone();
        post.push(a);
    }
    let output = match &model.terminal {
        Some(t) => x.dot(t.matrix()),
        None => x,
    };
    Ok(Activations { inputs, pre, post, output })
}

/// Training target for one batch.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean softmax cross-entropy of the model output (logits, or the pre-activation
    /// of a softmax output layer) against class indices.
    SoftmaxCrossEntropy(&'a [usize]),
    /// Sigmoid output layer against targets in [0,1]: cross-entropy summed over
    /// units, averaged over the batch.
    BinaryCrossEntropy(ArrayView2<'a, f64>),
    /// `‖output − targets‖²_F / b`.
    SquaredError(ArrayView2<'a, f64>),
}

/// Penalty weights added to the data loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Penalties {
    /// λ: batch mean of `‖f_A‖₁` over the last trainable layer's output.
    pub activation_l1: f64,
    /// λ_L: `‖W_last‖₁`.
    pub weight_l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Array1<f64>>,
    /// ∂L/∂o for the offset variant.
    pub offset: Option<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| Matrix::zeros(l.weights.dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            offset: model
                .terminal
                .as_ref()
                .and_then(|t| t.offset())
                .map(|o| Array1::zeros(o.len())),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Composite loss of a forward pass (data term plus penalties).
pub fn loss_value(
    model: &MlpModel,
    acts: &Activations,
    objective: Objective,
    penalties: Penalties,
) -> Result<f64> {
    let b = acts.output.nrows();
    check_objective(model, acts, objective)?;
    let last = model.layers.last().expect("non-empty");
    let data = match objective {
        Objective::SoftmaxCrossEntropy(labels) => {
            let logits = logits_of(model, acts);
            -labels
                .iter()
                .enumerate()
                .map(|(r, &c)| log_softmax_at(logits.row(r), c))
                .sum::<f64>()
                / b as f64
        }
        Objective::BinaryCrossEntropy(t) => {
            let z = acts.pre.last().expect("non-empty");
            // −[t·ln σ(z) + (1−t)·ln(1−σ(z))] = softplus(z) − t·z
            z.iter().zip(t.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / b as f64
        }
        Objective::SquaredError(t) => {
            (&acts.output - &t).mapv(|v| v * v).sum() / b as f64
        }
    };
    let act_l1 = penalties.activation_l1 * acts.attributes().mapv(f64::abs).sum() / b as f64;
    let w_l1 = penalties.weight_l1 * last.weights.mapv(f64::abs).sum();
    Ok(data + act_l1 + w_l1)
}

fn logits_of<'a>(model: &MlpModel, acts: &'a Activations) -> &'a Matrix {
    match (&model.terminal, model.layers.last().map(|l| l.activation)) {
        (None, Some(Activation::Softmax)) => acts.pre.last().expect("non-empty"),
        _ => &acts.output,
    }
}

fn check_objective(model: &MlpModel, acts: &Activations, objective: Objective) -> Result<()> {
    if acts.pre.len() != model.layers.len() {
        return Err(Error::Shape("activations come from a different model".into()));
    }
    for (i, (z, l)) in acts.pre.iter().zip(&model.layers).enumerate() {
        if z.ncols() != l.output_dim() || acts.inputs[i].ncols() != l.input_dim() {
            return Err(Error::Shape(format!("stale activations at layer {i}")));
        }
    }
    let b = acts.output.nrows();
    let last = model.layers.last().expect("non-empty").activation;
    match objective {
        Objective::SoftmaxCrossEntropy(labels) => {
            if labels.len() != b {
                return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
            }
            let n = acts.output.ncols();
            if let Some(&bad) = labels.iter().find(|&&c| c >= n) {
                return Err(Error::Index { index: bad, len: n });
            }
            if last == Activation::Sigmoid {
                return Err(Error::InvalidConfig("cross-entropy needs linear logits".into()));
            }
        }
        Objective::BinaryCrossEntropy(t) => {
            if last != Activation::Sigmoid || model.terminal.is_some() {
                return Err(Error::InvalidConfig("binary cross-entropy needs a sigmoid output layer".into()));
            }
            if t.dim() != acts.output.dim() {
                return Err(Error::Shape("targets differ from output shape".into()));
            }
        }
        Objective::SquaredError(t) => {
            if t.dim() != acts.output.dim() {
                return Err(Error::Shape("targets differ from output shape".into()));
            }
            if last == Activation::Softmax {
                return Err(Error::InvalidConfig("squared error on a softmax layer".into()));
            }
        }
    }
    Ok(())
}

/// Exact gradients of [`loss_value`] with respect to every trainable parameter.
pub fn backward_pass(
    model: &MlpModel,
    acts: &Activations,
    objective: Objective,
    penalties: Penalties,
) -> Result<Gradients> {
    check_objective(model, acts, objective)?;
    let b = acts.output.nrows() as f64;
    let nl = model.layers.len();
    let last = &model.layers[nl - 1];
    let z_last = &acts.pre[nl - 1];
    let a_last = &acts.post[nl - 1];
    if penalties.activation_l1 != 0.0 && last.activation == Activation::Softmax {
        return Err(Error::InvalidConfig("activation L1 on a softmax layer".into()));
    }

    let mut d_gstar = None;
    // Gradient with respect to the last pre-activation from the data term.
    let mut dz = match objective {
        Objective::SoftmaxCrossEntropy(labels) => {
            let logits = logits_of(model, acts);
            let mut d = softmax_rows(logits.view());
            for (r, &c) in labels.iter().enumerate() {
                d[[r, c]] -= 1.0;
            }
            d /= b;
            match &model.terminal {
                Some(t) => {
                    d_gstar = Some(a_last.t().dot(&d));
                    let da = d.dot(&t.matrix().t());
                    elementwise_chain(last.activation, &da, z_last, a_last)
                }
                None if last.activation == Activation::Softmax => d,
                None => elementwise_chain(last.activation, &d, z_last, a_last),
            }
        }
        Objective::BinaryCrossEntropy(t) => (a_last - &t) / b,
        Objective::SquaredError(t) => {
            let d_out = (&acts.output - &t) * (2.0 / b);
            match &model.terminal {
                Some(g) => {
                    d_gstar = Some(a_last.t().dot(&d_out));
                    let da = d_out.dot(&g.matrix().t());
                    elementwise_chain(last.activation, &da, z_last, a_last)
                }
                None => elementwise_chain(last.activation, &d_out, z_last, a_last),
            }
        }
    };
    if penalties.activation_l1 != 0.0 {
        let da = a_last.mapv(|v| penalties.activation_l1 * sign(v) / b);
        dz += &elementwise_chain(last.activation, &da, z_last, a_last);
    }

    let mut weights = vec![Matrix::zeros((0, 0)); nl];
    let mut biases = vec![Array1::zeros(0); nl];
    for i in (0..nl).rev() {
        let layer = &model.layers[i];
        let mut dw = dz.t().dot(&acts.inputs[i]);
        if i == nl - 1 && penalties.weight_l1 != 0.0 {
            dw.zip_mut_with(&layer.weights, |g, &w| *g += penalties.weight_l1 * sign(w));
        }
        biases[i] = dz.sum_axis(Axis(0));
        weights[i] = dw;
        if i > 0 {
            let da = dz.dot(&layer.weights);
            let below = &model.layers[i - 1];
            dz = elementwise_chain(below.activation, &da, &acts.pre[i - 1], &acts.post[i - 1]);
        }
    }
    let offset = match (&model.terminal, d_gstar) {
        (Some(t), Some(dg)) => t.offset_gradient(&dg),
        _ => None,
    };
    Ok(Gradients { weights, biases, offset })
}

fn elementwise_chain(act: Activation, da: &Matrix, z: &Matrix, a: &Matrix) -> Matrix {
    if act == Activation::Linear {
        return da.clone();
    }
    let mut out = da.clone();
    ndarray::Zip::from(&mut out)
        .and(z)
        .and(a)
        .for_each(|d, &z, &a| *d *= act.derivative(z, a));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub decay_epochs: usize,
    /// λ, activation L1 on the attribute layer.
    pub lambda: f64,
    /// λ_L, weight L1 on the last trainable layer.
    pub lambda_l: f64,
    pub seed: u64,
    /// Hidden widths below the attribute layer.
    pub hidden: Vec<usize>,
    /// Constant added to G before the offset is subtracted.
    pub pre_shift: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            steps: 200_000,
            lr: 1e-3,
            momentum: 0.9,
            decay: 0.94,
            decay_epochs: 2,
            lambda: 0.0,
            lambda_l: 0.0,
            seed: 0,
            hidden: vec![2048, 2048, 1024],
            pre_shift: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must be in (0, 1]");
        }
        if self.decay_epochs == 0 {
            return bad("decay interval must be >= 1 epoch");
        }
        if !(self.lambda >= 0.0 && self.lambda_l >= 0.0) || !self.lambda.is_finite() || !self.lambda_l.is_finite() {
            return bad("penalty weights must be finite and nonnegative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn penalties(&self) -> Penalties {
        Penalties { activation_l1: self.lambda, weight_l1: self.lambda_l }
    }
}

/// `lr₀ · decay^⌊epoch / decay_epochs⌋` with `epoch = ⌊step·batch / k⌋`.
pub fn learning_rate(config: &TrainConfig, step: usize, k: usize) -> f64 {
    let epoch = (step as u128 * config.batch as u128) / k.max(1) as u128;
    let drops = epoch / config.decay_epochs as u128;
    config.lr * config.decay.powi(drops.min(i32::MAX as u128) as i32)
}

/// Momentum buffers shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub Gradients);

impl Velocity {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Velocity(Gradients::zeros_like(model))
    }
}

/// `v ← μ·v − lr·g; w ← w + v`. The offset is clamped at zero after its update.
pub fn sgd_momentum_step(
    model: &mut MlpModel,
    grads: &Gradients,
    velocity: &mut Velocity,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let v = &mut velocity.0;
    if v.weights.len() != model.layers.len() || grads.weights.len() != model.layers.len() {
        return Err(Error::Shape("velocity does not match model".into()));
    }
    let mu = config.momentum;
    for (i, layer) in model.layers.iter_mut().enumerate() {
        if v.weights[i].dim() != layer.weights.dim() || grads.weights[i].dim() != layer.weights.dim() {
            return Err(Error::Shape(format!("layer {i}: velocity shape mismatch")));
        }
        ndarray::Zip::from(&mut v.weights[i])
            .and(&grads.weights[i])
            .for_each(|v, &g| *v = mu * *v - lr * g);
        layer.weights += &v.weights[i];
        ndarray::Zip::from(&mut v.biases[i])
            .and(&grads.biases[i])
            .for_each(|v, &g| *v = mu * *v - lr * g);
        layer.bias += &v.biases[i];
    }
    if let (Some(t), Some(vo), Some(go)) = (model.terminal.as_mut(), v.offset.as_mut(), grads.offset.as_ref()) {
        ndarray::Zip::from(&mut *vo).and(go).for_each(|v, &g| *v = mu * *v - lr * g);
        let o = t.offset().expect("offset variant") + &*vo;
        t.set_offset(o)?;
    }
    Ok(())
}

/// Endless stream of minibatch indices: each epoch is a fresh seeded
/// permutation; a batch may straddle two epochs.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        BatchSampler { rng, order, cursor: 0 }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Targets for the whole training set.
#[derive(Debug, Clone, Copy)]
pub enum TrainTarget<'a> {
    Classes(&'a [usize]),
    /// Per-sample sigmoid targets (k×units).
    Probabilities(ArrayView2<'a, f64>),
    Regression(ArrayView2<'a, f64>),
}

impl TrainTarget<'_> {
    fn len(&self) -> usize {
        match self {
            TrainTarget::Classes(l) => l.len(),
            TrainTarget::Probabilities(t) | TrainTarget::Regression(t) => t.nrows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    /// Loss of the first minibatch.
    pub first_loss: f64,
    /// Mean minibatch loss over the last `min(100, steps)` steps.
    pub final_loss: f64,
}

/// Runs `config.steps` momentum-SGD steps on `model`.
pub fn train(
    model: &mut MlpModel,
    features: ArrayView2<f64>,
    target: TrainTarget,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    ensure_finite(features, "features")?;
    let k = features.nrows();
    if k == 0 {
        return Err(Error::DegenerateInput("no training samples".into()));
    }
    if target.len() != k {
        return Err(Error::Shape(format!("{} targets for {k} samples", target.len())));
    }
    let mut sampler = BatchSampler::new(k, config.seed);
    let mut velocity = Velocity::zeros_like(model);
    let penalties = config.penalties();
    let tail = config.steps.clamp(1, 100);
    let mut first_loss = f64::NAN;
    let mut tail_sum = 0.0;
    for step in 0..config.steps {
        let idx = sampler.next_batch(config.batch);
        let x = features.select(Axis(0), &idx);
        let acts = forward_pass(model, x.view())?;
        let (labels, dense);
        let objective = match target {
            TrainTarget::Classes(l) => {
                labels = idx.iter().map(|&i| l[i]).collect::<Vec<_>>();
                Objective::SoftmaxCrossEntropy(&labels)
            }
            TrainTarget::Probabilities(t) => {
                dense = t.select(Axis(0), &idx);
                Objective::BinaryCrossEntropy(dense.view())
            }
            TrainTarget::Regression(t) => {
                dense = t.select(Axis(0), &idx);
                Objective::SquaredError(dense.view())
            }
        };
        let loss = loss_value(model, &acts, objective, penalties)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        if step == 0 {
            first_loss = loss;
        }
        if step + tail >= config.steps {
            tail_sum += loss;
        }
        let grads = backward_pass(model, &acts, objective, penalties)?;
        sgd_momentum_step(model, &grads, &mut velocity, config, learning_rate(config, step, k))?;
    }
    if model.layers.iter().any(|l| l.weights.iter().any(|v| !v.is_finite())) {
        return Err(Error::TrainingDiverged { step: config.steps, loss: f64::NAN });
    }
    Ok(TrainReport {
        steps: config.steps,
        first_loss,
        final_loss: if config.steps == 0 { f64::NAN } else { tail_sum / tail as f64 },
    })
}

/// What a checkpoint holds; decides how its output is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    StyleClassifier,
    DeepProxy,
    Logistic,
    EszslLinear,
    PcaLinear,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::StyleClassifier => 0,
            ModelKind::DeepProxy => 1,
            ModelKind::Logistic => 2,
            ModelKind::EszslLinear => 3,
            ModelKind::PcaLinear => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::StyleClassifier),
            1 => Some(ModelKind::DeepProxy),
            2 => Some(ModelKind::Logistic),
            3 => Some(ModelKind::EszslLinear),
            4 => Some(ModelKind::PcaLinear),
            _ => None,
        }
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PXYM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub model: MlpModel,
    /// Named scalars such as the selected penalty weights.
    pub metadata: Vec<(String, f64)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} does not fit in 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn f32s<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for &v in vals {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fn f64s<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for &v in vals {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    ckpt.model.validate()?;
    let mut out = Writer(Vec::new());
    out.0.extend_from_slice(CHECKPOINT_MAGIC);
    out.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.u8(ckpt.kind.code());
    out.u32(ckpt.model.layers.len())?;
    for l in &ckpt.model.layers {
        out.u32(l.input_dim())?;
        out.u32(l.output_dim())?;
        out.u8(l.activation.code());
        out.f32s(l.weights.iter());
        out.f32s(l.bias.iter());
    }
    match &ckpt.model.terminal {
        None => out.u8(0),
        Some(t) => {
            out.u8(1);
            out.u8(t.variant().tag());
            out.u32(t.m())?;
            out.u32(t.n())?;
            out.f32s(t.matrix().iter());
            out.f64s(t.source().iter());
            out.f64s([t.pre_shift()].iter());
            match t.offset() {
                None => out.u8(0),
                Some(o) => {
                    out.u8(1);
                    out.f64s(o.iter());
                }
            }
        }
    }
    out.u32(ckpt.metadata.len())?;
    for (key, value) in &ckpt.metadata {
        out.u32(key.len())?;
        out.0.extend_from_slice(key.as_bytes());
        out.f64s([*value].iter());
    }
    let sum = fnv1a(&out.0);
    out.0.extend_from_slice(&sum.to_le_bytes());
    w.write_all(&out.0)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(0, format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(0, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(0, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn matrix_f32(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::format(0, "size overflow"))?;
        Ok(Array2::from_shape_vec((rows, cols), self.f32s(n)?).expect("sized"))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 + 4 + 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "not a model checkpoint"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::format(0, "checkpoint checksum mismatch"));
    }
    let mut rd = Reader { bytes: body, pos: 4 };
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format(0, format!("unsupported checkpoint version {version}")));
    }
    let kind = ModelKind::from_code(rd.u8()?).ok_or_else(|| Error::format(0, "unknown model kind"))?;
    let count = rd.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let input = rd.u32()?;
        let output = rd.u32()?;
        let activation =
            Activation::from_code(rd.u8()?).ok_or_else(|| Error::format(0, "unknown activation code"))?;
        let weights = rd.matrix_f32(output, input)?;
        let bias = Array1::from(rd.f32s(output)?);
        layers.push(DenseLayer { weights, bias, activation });
    }
    let terminal = match rd.u8()? {
        0 => None,
        1 => {
            let variant =
                Variant::from_tag(rd.u8()?).ok_or_else(|| Error::format(0, "unknown G* variant"))?;
            let m = rd.u32()?;
            let n = rd.u32()?;
            let matrix = rd.matrix_f32(m, n)?;
            let source = Array2::from_shape_vec((m, n), rd.f64s(m * n)?).expect("sized");
            let pre_shift = rd.f64s(1)?[0];
            let offset = match rd.u8()? {
                0 => None,
                1 => Some(Array1::from(rd.f64s(m)?)),
                _ => return Err(Error::format(0, "bad offset flag")),
            };
            Some(GStar::from_parts(variant, matrix, source, pre_shift, offset)?)
        }
        _ => return Err(Error::format(0, "bad terminal flag")),
    };
    let entries = rd.u32()?;
    let mut metadata = Vec::new();
    for _ in 0..entries {
        let len = rd.u32()?;
        let key = std::str::from_utf8(rd.take(len)?)
            .map_err(|_| Error::format(0, "metadata key is not UTF-8"))?
            .to_string();
        metadata.push((key, rd.f64s(1)?[0]));
    }
    if rd.pos != body.len() {
        return Err(Error::format(0, "trailing bytes in checkpoint"));
    }
    let model = MlpModel { layers, terminal };
    model.validate()?;
    Ok(Checkpoint { kind, model, metadata })
}
